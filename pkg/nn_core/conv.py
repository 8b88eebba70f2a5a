"""
im2col convolution kernels shared by the dense and block-sparse paths.
Weights are laid out (C_out, C_in, K, K); im2col columns are (C_in, K, K) flattened.
"""
from typing import Optional, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def conv_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - kernel) // stride + 1


def im2col(x: np.ndarray, kernel: int, stride: int, padding: int) -> Tuple[np.ndarray, Tuple[int, int]]:
    """
    Unfold a (N, C, H, W) batch into patch rows.

    Returns:
        (cols of shape (N*H_out*W_out, C*K*K), (H_out, W_out))
    """
    n, c, h, w = x.shape
    h_out = conv_output_size(h, kernel, stride, padding)
    w_out = conv_output_size(w, kernel, stride, padding)
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    windows = sliding_window_view(x, (kernel, kernel), axis=(2, 3))
    windows = windows[:, :, ::stride, ::stride][:, :, :h_out, :w_out]
    cols = windows.transpose(0, 2, 3, 1, 4, 5).reshape(n * h_out * w_out, c * kernel * kernel)
    return cols, (h_out, w_out)


def col2im(dcols: np.ndarray, x_shape: Tuple[int, ...], kernel: int, stride: int, padding: int) -> np.ndarray:
    """Adjoint of im2col: scatter-add patch gradients back onto the input grid"""
    n, c, h, w = x_shape
    h_out = conv_output_size(h, kernel, stride, padding)
    w_out = conv_output_size(w, kernel, stride, padding)
    d = dcols.reshape(n, h_out, w_out, c, kernel, kernel)
    dxp = np.zeros((n, c, h + 2 * padding, w + 2 * padding), dtype=dcols.dtype)
    for i in range(kernel):
        for j in range(kernel):
            dxp[:, :, i:i + stride * h_out:stride, j:j + stride * w_out:stride] += d[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    return dxp[:, :, padding:padding + h, padding:padding + w]


def cols_to_output(out: np.ndarray, n: int, out_hw: Tuple[int, int]) -> np.ndarray:
    """(N*H_out*W_out, C_out) -> (N, C_out, H_out, W_out)"""
    h_out, w_out = out_hw
    return out.reshape(n, h_out, w_out, -1).transpose(0, 3, 1, 2)


def conv2d_forward(
    x: np.ndarray,
    weight: np.ndarray,
    bias: Optional[np.ndarray],
    stride: int,
    padding: int,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Dense convolution as one matrix multiply.

    Returns:
        (output of shape (N, C_out, H_out, W_out), im2col columns for backward)
    """
    c_out, _, kernel, _ = weight.shape
    cols, out_hw = im2col(x, kernel, stride, padding)
    out = cols @ weight.reshape(c_out, -1).T
    if bias is not None:
        out += bias
    return cols_to_output(out, x.shape[0], out_hw), cols


def conv2d_backward(
    dout: np.ndarray,
    cols: np.ndarray,
    x_shape: Tuple[int, ...],
    weight: np.ndarray,
    stride: int,
    padding: int,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Returns:
        (grad input, grad weight, grad bias)
    """
    c_out, _, kernel, _ = weight.shape
    dmat = dout.transpose(0, 2, 3, 1).reshape(-1, c_out)
    dweight = (dmat.T @ cols).reshape(weight.shape)
    dbias = dmat.sum(axis=0)
    dcols = dmat @ weight.reshape(c_out, -1)
    dx = col2im(dcols, x_shape, kernel, stride, padding)
    return dx, dweight, dbias

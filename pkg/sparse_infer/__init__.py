# sparse_infer package

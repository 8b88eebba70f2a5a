# nn_core package

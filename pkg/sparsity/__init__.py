# sparsity package

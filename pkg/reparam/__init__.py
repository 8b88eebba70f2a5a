# reparam package

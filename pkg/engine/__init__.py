# engine package

# entropy_model package

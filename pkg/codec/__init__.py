# codec package

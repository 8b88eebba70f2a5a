# data_io package

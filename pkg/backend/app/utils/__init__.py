# Package init: numeric kernels and text normalization

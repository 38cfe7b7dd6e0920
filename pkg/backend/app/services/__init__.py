# Package init: pipeline stages and algorithms

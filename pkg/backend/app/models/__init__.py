# Package init: dataset records, KG schema and rating matrix

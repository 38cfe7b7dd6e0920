# Package init: triple store and checkpoint codecs

"""KGEP app recommendation engine"""

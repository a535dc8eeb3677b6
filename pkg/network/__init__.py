"""The super-resolution network, its parameters and checkpoints"""

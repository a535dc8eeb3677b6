"""Volume representation, pseudo low-resolution augmentation and phantoms"""

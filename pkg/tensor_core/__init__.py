"""Minimal tensor engine: reverse-mode autodiff, Adam, gradient checking"""

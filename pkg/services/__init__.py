"""Training, inference, metrics and pair bookkeeping"""

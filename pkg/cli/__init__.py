"""Command-line subcommands and run configuration"""

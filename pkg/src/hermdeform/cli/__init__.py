"""Command line interface: config parsing, expression language, reports."""

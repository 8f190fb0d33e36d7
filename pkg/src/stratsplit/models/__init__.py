"""Built-in problems: weighted components, portfolio credit risk, self-avoiding walks."""

"""Index-assisted stratified sampling for online range aggregation."""

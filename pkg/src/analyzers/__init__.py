# Metric harness and external scorers
# Visualization and reporting modules 
# Soft-DTW and the length-channel aligner
"""Visual-imagery EEG decoding pipeline: preprocessing, 8x8 channel-grid
rearrangement, dot-product channel attention, a dual-stream 3D-CNN, AdamW
training with stratified cross-validation, and band-power statistics with
topography export. Ships a deterministic synthetic EEG generator so the whole
pipeline is testable without recordings.
"""

__version__ = "0.1.0"

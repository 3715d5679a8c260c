"""Multichannel target-speech extraction with a dual-path attention beamformer.

Subpackage tour:
    stft      analysis/synthesis filterbank and spectrogram containers
    features  spatial and spectral input features for the network
    roomsim   shoebox image-source simulator and mixture rendering
    autodiff  reverse-mode tape used by the network and training loop
    blocks    conv/GRU/attention building blocks
    model     the beamformer network itself
    mvdr      mask-based oracle beamformer baseline
    training  losses, optimizer, train/eval loops
    cli       command-line entry points
"""

__version__ = "0.1.0"

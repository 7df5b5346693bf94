# %% [markdown]
# # From audio to utterance vectors
# A chirp is turned into 40-band log-mel frames (25 ms windows, 10 ms hop)
# and then into the 600-dim functional vector the SVM classifier uses.

# %%
import numpy as np

from cpcmal.audio import functionals_600, segment_5s, wav_to_logmel

sr = 16000
t = np.arange(2 * sr) / sr
chirp = np.sin(2 * np.pi * (200 + 900 * t) * t)
frames = wav_to_logmel(chirp, sr)
print("frames:", frames.frames.shape)

# %%
# the loudest band drifts upward with the chirp
peaks = frames.frames.argmax(axis=1)
print("peak band every 40 frames:", peaks[::40])

# %%
vec = functionals_600(frames).vector
print("functionals:", vec.shape, "static block 280, delta blocks 320")

# %%
# short utterances are padded to 5 s for CPC; the functionals ignore the padding
padded = segment_5s(frames, np.random.default_rng(0))
print("padded:", padded.frames.shape, "valid:", padded.n_valid)
print("same functionals:", np.array_equal(functionals_600(padded).vector, vec))

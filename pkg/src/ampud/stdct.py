"""Frame-wise orthonormal DCT for audio, WAV ingestion, and the composed operator A W."""
import wave

import numpy as np
from scipy.fft import dct, idct


class ShortTimeDct:
    """Non-overlapping DCT-II frames; with window = hop = points it is orthonormal.

    Signals whose length is not a multiple of the hop are zero-padded; the
    number of padded samples is kept in ``pad``.
    """

    def __init__(self, length, window=32, hop=32, n_points=32):
        if not window == hop == n_points:
            raise ValueError("only window == hop == n_points is supported")
        if length < 1:
            raise ValueError("empty input")
        self.window = int(window)
        self.frames = -(-int(length) // self.window)
        self.length = int(length)
        self.pad = self.frames * self.window - self.length

    @property
    def size(self):
        return self.frames * self.window

    def forward(self, x):
        x = np.asarray(x, dtype=float)
        if x.size not in (self.length, self.size):
            raise ValueError(f"expected {self.length} samples, got {x.size}")
        buf = np.zeros(self.size)
        buf[:x.size] = x
        return dct(buf.reshape(self.frames, self.window), type=2, norm="ortho", axis=1).ravel()

    def inverse(self, theta):
        theta = np.asarray(theta, dtype=float)
        if theta.size != self.size:
            raise ValueError(f"expected {self.size} coefficients, got {theta.size}")
        return idct(theta.reshape(self.frames, self.window), type=2, norm="ortho", axis=1).ravel()


def stdct_forward(x, window=32):
    return ShortTimeDct(np.size(x), window, window, window).forward(x)


def stdct_inverse(theta, window=32):
    return ShortTimeDct(np.size(theta), window, window, window).inverse(theta)


class SynthesisOperator:
    """Phi = A W applied as two factors; W maps DCT coefficients to samples."""

    def __init__(self, op, transform):
        if op.N != transform.size:
            raise ValueError("matrix width must equal the padded signal length")
        self.op, self.tf = op, transform
        self.M, self.N = op.M, op.N

    def matvec(self, theta):
        return self.op.matvec(self.tf.inverse(theta))

    def rmatvec(self, r):
        # W is orthonormal, so W^T is the forward transform.
        return self.tf.forward(self.op.rmatvec(r))


def ingest_audio(path, length=None):
    """Mono 16-bit PCM WAV scaled to [-1, 1); optionally keep the first ``length`` samples.

    Returns ``(signal, meta)`` where ``meta`` records the original length and
    any truncation.
    """
    with wave.open(str(path), "rb") as fh:
        if fh.getnchannels() != 1:
            raise ValueError("only mono WAV files are supported")
        if fh.getsampwidth() != 2 or fh.getcomptype() != "NONE":
            raise ValueError("only 16-bit PCM WAV files are supported")
        raw = fh.readframes(fh.getnframes())
        rate = fh.getframerate()
    x = np.frombuffer(raw, dtype="<i2").astype(float) / 32768.0
    meta = {"samples": x.size, "rate": rate, "truncated_to": None}
    if length is not None and length < x.size:
        x = x[:length]
        meta["truncated_to"] = int(length)
    return x, meta


def write_wav(path, x, rate=8000):
    pcm = np.clip(np.round(np.asarray(x) * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(rate)
        fh.writeframes(pcm.tobytes())

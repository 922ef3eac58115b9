"""Recurrent-encoder kernels for the policy network.

Two implementations with identical signatures:

* ``numpy`` -- vectorised over sequences, Python loop over time;
* ``numba`` -- ``@njit`` loops, compiled on first use.

The numba path is used when numba imports and ``PIMTL_DISABLE_NUMBA`` is not
set to a truthy value. Both compute the same function; results agree to
floating-point reassociation (about 1e-15 relative), not bit-for-bit.

Shapes: ``K`` sequences of length ``L`` with ``F`` features, hidden size
``D``. Sequences come in ``G`` contiguous groups of ``m`` (one group per
state matrix); gradients are returned per group so callers can take
per-sample norms.
"""

from __future__ import annotations

import os

import numpy as np

from .errors import ConfigError

_FALSY = {"", "0", "false", "no", "off"}


def numba_disabled_by_env() -> bool:
    return os.environ.get("PIMTL_DISABLE_NUMBA", "").strip().lower() not in _FALSY


try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAVE_NUMBA = False


# ---------------------------------------------------------------- numpy path


def rnn_forward_numpy(w_in, w_rec, b_h, u, b_s, seqs, prev):
    K, L, _ = seqs.shape
    D = b_h.shape[0]
    hs = np.empty((K, L, D))
    h = np.zeros((K, D))
    for t in range(L):
        h = np.tanh(seqs[:, t, :] @ w_in.T + h @ w_rec.T + b_h)
        hs[:, t, :] = h
    scores = h @ u[:D] + u[D] * prev + b_s
    return scores, hs


def rnn_backward_numpy(w_in, w_rec, b_h, u, b_s, seqs, prev, hs, dscore, m):
    K, L, F = seqs.shape
    D = b_h.shape[0]
    G = K // m
    d_u = np.empty((G, D + 1))
    d_u[:, :D] = (dscore[:, None] * hs[:, -1, :]).reshape(G, m, D).sum(axis=1)
    d_u[:, D] = (dscore * prev).reshape(G, m).sum(axis=1)
    d_bs = dscore.reshape(G, m).sum(axis=1)
    d_win = np.zeros((G, D, F))
    d_wrec = np.zeros((G, D, D))
    d_bh = np.zeros((G, D))
    dh = dscore[:, None] * u[None, :D]
    for t in range(L - 1, -1, -1):
        h_t = hs[:, t, :]
        dz = dh * (1.0 - h_t * h_t)
        dzg = dz.reshape(G, m, D)
        d_win += np.einsum("gmd,gmf->gdf", dzg, seqs[:, t, :].reshape(G, m, F))
        if t > 0:
            d_wrec += np.einsum("gmd,gme->gde", dzg, hs[:, t - 1, :].reshape(G, m, D))
        d_bh += dzg.sum(axis=1)
        dh = dz @ w_rec
    return d_win, d_wrec, d_bh, d_u, d_bs


# ---------------------------------------------------------------- numba path

if HAVE_NUMBA:

    @numba.njit(cache=True, fastmath={"reassoc"})
    def _rnn_forward_nb(w_in, w_rec, b_h, u, b_s, seqs, prev):
        K, L, F = seqs.shape
        D = b_h.shape[0]
        hs = np.empty((K, L, D))
        scores = np.empty(K)
        z = np.empty(D)
        for k in range(K):
            for t in range(L):
                for d in range(D):
                    acc = b_h[d]
                    for f in range(F):
                        acc += w_in[d, f] * seqs[k, t, f]
                    if t > 0:
                        for e in range(D):
                            acc += w_rec[d, e] * hs[k, t - 1, e]
                    z[d] = acc
                for d in range(D):
                    hs[k, t, d] = np.tanh(z[d])
            s = b_s + u[D] * prev[k]
            for d in range(D):
                s += u[d] * hs[k, L - 1, d]
            scores[k] = s
        return scores, hs

    @numba.njit(cache=True, fastmath={"reassoc"})
    def _rnn_backward_nb(w_in, w_rec, b_h, u, b_s, seqs, prev, hs, dscore, m):
        K, L, F = seqs.shape
        D = b_h.shape[0]
        G = K // m
        d_win = np.zeros((G, D, F))
        d_wrec = np.zeros((G, D, D))
        d_bh = np.zeros((G, D))
        d_u = np.zeros((G, D + 1))
        d_bs = np.zeros(G)
        dh = np.empty(D)
        dz = np.empty(D)
        for k in range(K):
            g = k // m
            ds = dscore[k]
            if ds == 0.0:
                continue
            for d in range(D):
                d_u[g, d] += ds * hs[k, L - 1, d]
                dh[d] = ds * u[d]
            d_u[g, D] += ds * prev[k]
            d_bs[g] += ds
            for t in range(L - 1, -1, -1):
                for d in range(D):
                    h = hs[k, t, d]
                    dz[d] = dh[d] * (1.0 - h * h)
                for d in range(D):
                    dzd = dz[d]
                    d_bh[g, d] += dzd
                    for f in range(F):
                        d_win[g, d, f] += dzd * seqs[k, t, f]
                    if t > 0:
                        for e in range(D):
                            d_wrec[g, d, e] += dzd * hs[k, t - 1, e]
                if t > 0:
                    for e in range(D):
                        acc = 0.0
                        for d in range(D):
                            acc += w_rec[d, e] * dz[d]
                        dh[e] = acc
        return d_win, d_wrec, d_bh, d_u, d_bs

    def rnn_forward_numba(w_in, w_rec, b_h, u, b_s, seqs, prev):
        return _rnn_forward_nb(w_in, w_rec, b_h, u, float(b_s), seqs, prev)

    def rnn_backward_numba(w_in, w_rec, b_h, u, b_s, seqs, prev, hs, dscore, m):
        return _rnn_backward_nb(w_in, w_rec, b_h, u, float(b_s), seqs, prev, hs, dscore, int(m))

else:  # pragma: no cover
    rnn_forward_numba = rnn_forward_numpy
    rnn_backward_numba = rnn_backward_numpy


BACKENDS = {
    "numpy": (rnn_forward_numpy, rnn_backward_numpy),
    "numba": (rnn_forward_numba, rnn_backward_numba),
}


def default_backend() -> str:
    if HAVE_NUMBA and not numba_disabled_by_env():
        return "numba"
    return "numpy"


def get_kernels(backend: str | None = None):
    """Return ``(forward, backward)`` for ``backend`` (default: env-selected)."""
    name = backend or default_backend()
    try:
        return BACKENDS[name]
    except KeyError:
        raise ConfigError(f"unknown kernel backend {name!r}; choose from {sorted(BACKENDS)}") from None

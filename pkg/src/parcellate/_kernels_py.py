"""Pure-Python/numpy implementations of the hot kernels.

These mirror ``_kernels.pyx`` operation for operation. Squared distances are
accumulated coordinate by coordinate in a fixed order and reductions over
track points run sequentially, so the clustering kernels return bit-identical
results on both backends. The coordinate-descent kernel only agrees to
rounding (the initial gradient uses a BLAS product here).
"""
import numpy as np

_CHUNK = 4096


def _sq3(p, q):
    """Squared distances between rows of p (m, 3) and q (k, 3), shape (m, k)."""
    d = p[:, None, 0] - q[None, :, 0]
    s = d * d
    d = p[:, None, 1] - q[None, :, 1]
    s = s + d * d
    d = p[:, None, 2] - q[None, :, 2]
    s = s + d * d
    return s


def _flip_block(z, centroids):
    a, b = z[:, :3], z[:, 3:]
    u, v = centroids[:, :3], centroids[:, 3:]
    direct = _sq3(a, u) + _sq3(b, v)
    flipped = _sq3(a, v) + _sq3(b, u)
    flip = flipped < direct
    best = np.where(flip, flipped, direct)
    labels = np.argmin(best, axis=1)
    rows = np.arange(z.shape[0])
    return labels, flip[rows, labels], best[rows, labels]


def flip_assign(z, centroids):
    """Nearest centroid under the orientation-free endpoint distance.

    Returns ``(labels, flipped, dist2)``. Ties between orientations keep the
    stored order, ties between centroids go to the lowest index.
    """
    m = z.shape[0]
    labels = np.empty(m, dtype=np.int64)
    flipped = np.empty(m, dtype=np.uint8)
    dist = np.empty(m, dtype=np.float64)
    for start in range(0, m, _CHUNK):
        stop = min(start + _CHUNK, m)
        lab, fl, d = _flip_block(z[start:stop], centroids)
        labels[start:stop] = lab
        flipped[start:stop] = fl
        dist[start:stop] = d
    return labels, flipped, dist


def minibatch_run(z, centroids, counts, batches):
    """Apply Sculley mini-batch updates in place.

    ``batches`` is a (T, B) array of row indices into ``z``. Each batch is
    assigned against the centroids as they stood at the start of the batch,
    then the members are folded in one at a time with rate 1/count.
    """
    for batch in batches:
        zb = z[batch]
        labels, flipped, _ = _flip_block(zb, centroids)
        rows = centroids.tolist()
        cnt = counts.tolist()
        for x, j, fl in zip(zb.tolist(), labels.tolist(), flipped.tolist()):
            if fl:
                x = x[3:] + x[:3]
            cnt[j] += 1
            eta = 1.0 / cnt[j]
            keep = 1.0 - eta
            row = rows[j]
            for d in range(6):
                row[d] = keep * row[d] + eta * x[d]
        centroids[:] = rows
        counts[:] = cnt


def _mdf_to_centroids(track, flipped_track, centroids):
    # sequential sum over points, matching the compiled loop
    nq = track.shape[0]
    direct = np.zeros(centroids.shape[0])
    flipped = np.zeros(centroids.shape[0])
    for j in range(nq):
        d = centroids[:, j, 0] - track[j, 0]
        s = d * d
        d = centroids[:, j, 1] - track[j, 1]
        s = s + d * d
        d = centroids[:, j, 2] - track[j, 2]
        s = s + d * d
        direct = direct + np.sqrt(s)
        d = centroids[:, j, 0] - flipped_track[j, 0]
        s = d * d
        d = centroids[:, j, 1] - flipped_track[j, 1]
        s = s + d * d
        d = centroids[:, j, 2] - flipped_track[j, 2]
        s = s + d * d
        flipped = flipped + np.sqrt(s)
    return direct / nq, flipped / nq


def quickbundles(tracks, threshold):
    """Single-pass QuickBundles over resampled tracks of shape (m, q, 3).

    Each track joins the first existing cluster whose centroid is within
    ``threshold`` (MDF), otherwise it opens a new cluster. Returns the
    per-track cluster labels in creation order.
    """
    m, nq, _ = tracks.shape
    labels = np.empty(m, dtype=np.int64)
    sums = np.zeros((max(m, 1), nq, 3))
    sizes = np.zeros(max(m, 1))
    n_clusters = 0
    for i in range(m):
        track = tracks[i]
        rev = track[::-1]
        chosen = -1
        if n_clusters:
            centroids = sums[:n_clusters] / sizes[:n_clusters, None, None]
            direct, flipped = _mdf_to_centroids(track, rev, centroids)
            dist = np.minimum(direct, flipped)
            hits = np.flatnonzero(dist <= threshold)
            if hits.size:
                chosen = int(hits[0])
                use_flip = flipped[chosen] < direct[chosen]
        if chosen < 0:
            chosen = n_clusters
            n_clusters += 1
            use_flip = False
        sums[chosen] += rev if use_flip else track
        sizes[chosen] += 1.0
        labels[i] = chosen
    return labels


def cd_gram(gram, corr, beta, l1, l2, tol, max_cycles, usable):
    """Cyclic coordinate descent for the elastic net in covariance form.

    Minimises ``0.5 b'Gb - c'b + l1 |b|_1 + 0.5 l2 |b|^2`` in place over the
    coordinates flagged in ``usable``. Alternates full sweeps with sweeps
    over the non-zero set found by the last full sweep; during the latter
    only the active gradient entries are maintained. Returns the number of
    sweeps performed, or -1 when ``max_cycles`` is exhausted.
    """
    p = corr.shape[0]
    full = [j for j in range(p) if usable[j]]
    cycles = 0

    def refresh():
        nz = np.flatnonzero(beta)
        return corr - gram[:, nz] @ beta[nz]

    def sweep(coords, grad, rows):
        biggest = 0.0
        for j in coords:
            old = beta[j]
            gjj = gram[j, j]
            rho = grad[j] + gjj * old
            if rho > l1:
                new = (rho - l1) / (gjj + l2)
            elif rho < -l1:
                new = (rho + l1) / (gjj + l2)
            else:
                new = 0.0
            if new != old:
                delta = new - old
                grad[rows] -= gram[rows, j] * delta
                beta[j] = new
                if abs(delta) > biggest:
                    biggest = abs(delta)
        return biggest

    grad = refresh()
    everything = slice(None)
    while cycles < max_cycles:
        change = sweep(full, grad, everything)
        cycles += 1
        if change < tol:
            return cycles
        active = [j for j in full if beta[j] != 0.0]
        rows = np.array(active, dtype=np.intp)
        while cycles < max_cycles:
            change = sweep(active, grad, rows)
            cycles += 1
            if change < tol:
                break
        grad = refresh()
    return -1

"""Independent oracles shared by the unit tests and the acceptance suite."""

import numpy as np

from goal.gradient import batch_gradient
from goal.mining import mine_hard_negatives, similarity_matrix
from goal.reference import hinge_arguments, triplet_loss
from goal.trainer import backward_and_step, forward, init_model
from goal.weights import GradientObjective, PairCon, TripletCon


def brute_force_mine(s, ids):
    """Plain double loop; strict ``>`` keeps the first (lowest-index) maximum."""
    n = len(ids)
    text, image = [], []
    for i in range(n):
        best, arg = -np.inf, None
        for j in range(n):
            if ids[j] != ids[i] and s[i][j] > best:
                best, arg = s[i][j], j
        text.append(arg)
    for j in range(n):
        best, arg = -np.inf, None
        for i in range(n):
            if ids[i] != ids[j] and s[i][j] > best:
                best, arg = s[i][j], i
        image.append(arg)
    return text, image


def _fd_matrix(f, w, h):
    g = np.empty_like(w)
    for idx in np.ndindex(w.shape):
        orig = w[idx]
        w[idx] = orig + h
        up = f()
        w[idx] = orig - h
        down = f()
        w[idx] = orig
        g[idx] = (up - down) / (2 * h)
    return g


def end_to_end_case(rng, n=6, dim=3, d_img=5, d_txt=4, margin=0.2, lr=0.1, h=1e-6, band=1e-3):
    """Relative error between the applied SGD update and FD of the loss on W.

    Returns ``None`` when a triplet lies within ``band`` of the hinge (the
    caller redraws).  Mining is frozen at the unperturbed weights.
    """
    model = init_model(dim, d_img, d_txt, rng)
    images = rng.standard_normal((n, d_img))
    texts = rng.standard_normal((n, d_txt))
    ids = np.arange(n)
    batch = forward(model, images, texts, ids)
    mined = mine_hard_negatives(similarity_matrix(batch), ids)
    if np.any(np.abs(hinge_arguments(batch, mined, margin)) < band):
        return None
    obj = GradientObjective(TripletCon(margin), PairCon())
    grad = batch_gradient(obj, batch, mined)
    new = backward_and_step(model, images, texts, grad, lr)
    applied_img = (model.w_img - new.w_img) / lr
    applied_txt = (model.w_txt - new.w_txt) / lr

    w_img = model.w_img.copy()
    w_txt = model.w_txt.copy()

    def loss():
        from goal.trainer import TwoTowerModel

        return triplet_loss(forward(TwoTowerModel(w_img, w_txt), images, texts, ids), mined, margin)

    fd_img = _fd_matrix(loss, w_img, h)
    fd_txt = _fd_matrix(loss, w_txt, h)
    diff = max(np.max(np.abs(applied_img - fd_img)), np.max(np.abs(applied_txt - fd_txt)))
    scale = max(np.max(np.abs(fd_img)), np.max(np.abs(fd_txt)))
    return float(diff / scale) if scale > 0 else float(diff)


def fd_convergence_ratio(h, rng):
    """Error ratio err(h) / err(h/2) of the central-difference oracle on a smooth function.

    The test function is sum(e^3) over the batch, whose exact gradient is
    3 e^2 and whose third derivative is non-zero, so the truncation term
    h^2 f'''/6 dominates rounding for moderate ``h``.
    """
    from goal.reference import fd_gradient, random_unit_batch

    batch = random_unit_batch(rng, 4, 3)

    def f(b):
        return float(np.sum(b.x ** 3) + np.sum(b.y ** 3))

    def err(step):
        g = fd_gradient(f, batch, step)
        return max(np.max(np.abs(g.grad_x - 3 * batch.x ** 2)), np.max(np.abs(g.grad_y - 3 * batch.y ** 2)))

    return err(h) / err(h / 2)

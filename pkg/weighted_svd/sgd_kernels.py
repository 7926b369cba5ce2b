"""Compiled per-epoch SGD loops.

Both kernels walk ``order`` (positions into the rating arrays) and update the parameter arrays in
place. They return the position in ``order`` at which a parameter became non-finite, or -1.
With ``sequential`` false every partial derivative of a rating is taken at the parameters as they
were before that rating's update; with ``sequential`` true the blocks are updated one after another
and each one sees the blocks already updated before it.
"""

import math

import numpy as np
from numba import njit

# Slots of the learning-rate and regularization arrays, in ``Coefficients`` field order.
W, P, Q, USER, ITEM = 0, 1, 2, 3, 4


@njit(nogil=True)
def _latent_predict(mean, user_bias, item_bias, user_factors, item_factors, weights, use_bias, u, j):
    value = 0.0
    for f in range(user_factors.shape[1]):
        value += weights[f] * user_factors[u, f] * item_factors[j, f]
    if use_bias:
        value += mean + user_bias[u] + item_bias[j]
    return value


@njit(nogil=True)
def latent_epoch(
    users,
    items,
    ratings,
    order,
    mean,
    user_bias,
    item_bias,
    user_factors,
    item_factors,
    weights,
    use_bias,
    update_weights,
    lr,
    reg,
    scale,
    sequential,
):
    """One epoch for PMF (no biases), SVD (unit weights, frozen) and Weighted-SVD."""
    k = user_factors.shape[1]
    p_old = np.empty(k)
    q_old = np.empty(k)
    w_old = np.empty(k)
    for pos in range(order.shape[0]):
        idx = order[pos]
        u = users[idx]
        j = items[idx]
        r = ratings[idx]
        err = r - _latent_predict(mean, user_bias, item_bias, user_factors, item_factors, weights, use_bias, u, j)
        check = err
        if use_bias:
            bu = user_bias[u]
            user_bias[u] = bu - scale * lr[USER] * (-err + reg[USER] * bu)
            if sequential:
                err = r - _latent_predict(
                    mean, user_bias, item_bias, user_factors, item_factors, weights, use_bias, u, j
                )
            bi = item_bias[j]
            item_bias[j] = bi - scale * lr[ITEM] * (-err + reg[ITEM] * bi)
            if sequential:
                err = r - _latent_predict(
                    mean, user_bias, item_bias, user_factors, item_factors, weights, use_bias, u, j
                )
            check += user_bias[u] + item_bias[j]
        for f in range(k):
            p_old[f] = user_factors[u, f]
            q_old[f] = item_factors[j, f]
            w_old[f] = weights[f]
        if update_weights:
            for f in range(k):
                weights[f] = w_old[f] - scale * lr[W] * (-err * p_old[f] * q_old[f] + reg[W] * w_old[f])
            if sequential:
                err = r - _latent_predict(
                    mean, user_bias, item_bias, user_factors, item_factors, weights, use_bias, u, j
                )
                for f in range(k):
                    w_old[f] = weights[f]
        for f in range(k):
            user_factors[u, f] = p_old[f] - scale * lr[P] * (-err * w_old[f] * q_old[f] + reg[P] * p_old[f])
        if sequential:
            err = r - _latent_predict(mean, user_bias, item_bias, user_factors, item_factors, weights, use_bias, u, j)
            for f in range(k):
                p_old[f] = user_factors[u, f]
        for f in range(k):
            item_factors[j, f] = q_old[f] - scale * lr[Q] * (-err * w_old[f] * p_old[f] + reg[Q] * q_old[f])
            check += weights[f] + user_factors[u, f] + item_factors[j, f]
        if not math.isfinite(check):
            return pos
    return -1


@njit(nogil=True)
def _implicit_predict(mean, user_bias, item_bias, user_factors, item_factors, feedback, u, j):
    value = mean + user_bias[u] + item_bias[j]
    for f in range(user_factors.shape[1]):
        value += item_factors[j, f] * (user_factors[u, f] + feedback[f])
    return value


@njit(nogil=True)
def implicit_epoch(
    users,
    items,
    ratings,
    order,
    indptr,
    indices,
    mean,
    user_bias,
    item_bias,
    user_factors,
    item_factors,
    implicit_factors,
    lr,
    reg,
    scale,
    sequential,
):
    """One SVD++ epoch; implicit factors share the item-factor rate and regularization."""
    k = user_factors.shape[1]
    feedback = np.empty(k)
    p_old = np.empty(k)
    q_old = np.empty(k)
    for pos in range(order.shape[0]):
        idx = order[pos]
        u = users[idx]
        j = items[idx]
        r = ratings[idx]
        start = indptr[u]
        stop = indptr[u + 1]
        norm = 1.0 / math.sqrt(stop - start) if stop > start else 0.0
        for f in range(k):
            feedback[f] = 0.0
        for g in range(start, stop):
            item = indices[g]
            for f in range(k):
                feedback[f] += implicit_factors[item, f]
        for f in range(k):
            feedback[f] *= norm

        err = r - _implicit_predict(mean, user_bias, item_bias, user_factors, item_factors, feedback, u, j)
        bu = user_bias[u]
        user_bias[u] = bu - scale * lr[USER] * (-err + reg[USER] * bu)
        if sequential:
            err = r - _implicit_predict(mean, user_bias, item_bias, user_factors, item_factors, feedback, u, j)
        bi = item_bias[j]
        item_bias[j] = bi - scale * lr[ITEM] * (-err + reg[ITEM] * bi)
        if sequential:
            err = r - _implicit_predict(mean, user_bias, item_bias, user_factors, item_factors, feedback, u, j)
        check = err + user_bias[u] + item_bias[j]

        for f in range(k):
            p_old[f] = user_factors[u, f]
            q_old[f] = item_factors[j, f]
        for f in range(k):
            user_factors[u, f] = p_old[f] - scale * lr[P] * (-err * q_old[f] + reg[P] * p_old[f])
        if sequential:
            err = r - _implicit_predict(mean, user_bias, item_bias, user_factors, item_factors, feedback, u, j)
            for f in range(k):
                p_old[f] = user_factors[u, f]
        for f in range(k):
            item_factors[j, f] = q_old[f] - scale * lr[Q] * (-err * (p_old[f] + feedback[f]) + reg[Q] * q_old[f])
            check += user_factors[u, f] + item_factors[j, f]
        if sequential:
            err = r - _implicit_predict(mean, user_bias, item_bias, user_factors, item_factors, feedback, u, j)
            for f in range(k):
                q_old[f] = item_factors[j, f]
        for g in range(start, stop):
            item = indices[g]
            for f in range(k):
                y = implicit_factors[item, f]
                implicit_factors[item, f] = y - scale * lr[Q] * (-err * norm * q_old[f] + reg[Q] * y)
                check += implicit_factors[item, f]
        if not math.isfinite(check):
            return pos
    return -1

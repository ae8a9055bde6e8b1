"""Exercise and interaction features under the NI / 1PL / 2PL / 3PL schemes.

All functions accept integer index arrays of any shape (a single step, a
sequence ``[L]`` or a batch ``[B, L]``) and return tensors of shape
``index_shape + (D,)``.

Table names inside the :class:`~lskt.params.ParameterStore`:

==================  ========  ============================================
name                shape     meaning
==================  ========  ============================================
``concept``         [C, D]    concept embedding
``concept_var``     [C, D]    concept variation embedding
``response``        [2, D]    response embedding
``response_var``    [2, D]    response variation embedding
``guess_response``  [2, D]    response embedding injected by a guess
``difficulty``      [E]       per-exercise difficulty scalar
``exercise_latent`` [E, D]    per-exercise latent vector
``W1``..``W6``      [2D, D]   projections (``W3`` is [D, D]), ``bK`` biases
==================  ========  ============================================
"""

from __future__ import annotations

import numpy as np

from . import autograd as ag
from .errors import ContractError

IRT_LEVELS = ("NI", "1PL", "2PL", "3PL")

# projection matrices that take a [2D] concatenation down to D
PROJECTIONS = ("W1", "W2", "W4", "W5", "W6")


def init_tables(store, n_concepts, n_exercises, dim, rng):
    """Create every embedding table and projection in ``store``."""
    store.uniform("concept", (n_concepts, dim), rng, fan_in=dim)
    store.uniform("concept_var", (n_concepts, dim), rng, fan_in=dim)
    store.uniform("response", (2, dim), rng, fan_in=dim)
    store.uniform("response_var", (2, dim), rng, fan_in=dim)
    store.uniform("guess_response", (2, dim), rng, fan_in=dim)
    store.zeros("difficulty", (n_exercises,))
    store.uniform("exercise_latent", (n_exercises, dim), rng, fan_in=dim)
    store.uniform("W3", (dim, dim), rng)
    for w in PROJECTIONS:
        store.uniform(w, (2 * dim, dim), rng)
        store.zeros("b" + w[1:], (dim,))


def _project(store, w, z):
    return ag.add(ag.matmul(z, store[w]), store["b" + w[1:]])


def _check_responses(responses):
    r = np.asarray(responses)
    if r.size and not np.isin(r, (0, 1)).all():
        raise ContractError(f"responses must be 0 or 1, got values {np.unique(r)}")
    return r


def modulation(store, exercises, w):
    """``[Repeat(difficulty, D) || latent @ W3] @ w`` for each exercise."""
    alpha = ag.take(store["difficulty"], exercises)
    dim = store["W3"].shape[0]
    rep = ag.mul(ag.reshape(alpha, alpha.shape + (1,)), np.ones(dim))
    disc = ag.matmul(ag.take(store["exercise_latent"], exercises), store["W3"])
    return _project(store, w, ag.concat_last(rep, disc))


def interaction_parts(store, concepts, responses):
    """Raw interaction embedding ``g`` and its variation ``g'``."""
    r = _check_responses(responses)
    g = ag.add(ag.take(store["concept"], concepts), ag.take(store["response"], r))
    g_var = ag.add(ag.take(store["concept_var"], concepts), ag.take(store["response_var"], r))
    return g, g_var


def _scaled(store, exercises, vec):
    alpha = ag.take(store["difficulty"], exercises)
    return ag.mul(ag.reshape(alpha, alpha.shape + (1,)), vec)


def embed_exercise(store, irt, concepts, exercises):
    if irt == "NI":
        return ag.take(store["concept"], concepts)
    c = ag.take(store["concept"], concepts)
    c_var = ag.take(store["concept_var"], concepts)
    if irt == "1PL":
        return _project(store, "W1", ag.concat_last(c, _scaled(store, exercises, c_var)))
    if irt in ("2PL", "3PL"):
        return ag.add(c, ag.mul(modulation(store, exercises, "W4"), c_var))
    raise ContractError(f"unknown irt level {irt!r}")


def embed_ni(store, concepts, responses):
    x = ag.take(store["concept"], concepts)
    y = ag.add(x, ag.take(store["response"], _check_responses(responses)))
    return x, y


def embed_interaction_1pl(store, concepts, responses, exercises):
    g, g_var = interaction_parts(store, concepts, responses)
    return _project(store, "W2", ag.concat_last(g, _scaled(store, exercises, g_var)))


def embed_interaction_2pl(store, concepts, responses, exercises):
    g, g_var = interaction_parts(store, concepts, responses)
    return ag.add(g, ag.mul(modulation(store, exercises, "W5"), g_var))


def sample_guess(rng, shape):
    """Two fair coins per step: whether a guess occurs, and which response it injects."""
    guessed = rng.random(shape) < 0.5
    which = (rng.random(shape) < 0.5).astype(np.int64)
    return guessed, which


def embed_interaction_3pl(
    store,
    concepts,
    responses,
    exercises,
    next_concepts,
    *,
    train,
    rng=None,
    guess_in_eval=False,
    guess=None,
):
    """2PL-style interaction (through ``W6``) plus the next concept and guess noise.

    ``guess`` may be a precomputed ``(guessed, which)`` pair; otherwise it is
    drawn from ``rng`` whenever noise is active.
    """
    g, g_var = interaction_parts(store, concepts, responses)
    base = ag.add(g, ag.mul(modulation(store, exercises, "W6"), g_var))
    f = ag.take(store["concept"], next_concepts)
    noisy = train or guess_in_eval
    if noisy:
        if guess is None:
            if rng is None:
                raise ContractError("3PL guess noise is active but no rng was given")
            guess = sample_guess(rng, np.shape(next_concepts))
        guessed, which = guess
        noise = ag.take(store["guess_response"], which)
        f = ag.add(f, ag.mul(noise, np.asarray(guessed, dtype=np.float64)[..., None]))
    return ag.add(f, base)


def next_concepts_for(concepts, lengths):
    """Concept of step t+1 for every step; the last valid step reuses its own."""
    concepts = np.asarray(concepts)
    nxt = np.empty_like(concepts)
    nxt[..., :-1] = concepts[..., 1:]
    nxt[..., -1] = concepts[..., -1]
    lengths = np.asarray(lengths)
    if concepts.ndim == 1:
        last = int(lengths) - 1
        nxt[last] = concepts[last]
    else:
        rows = np.arange(concepts.shape[0])
        last = lengths - 1
        nxt[rows, last] = concepts[rows, last]
    return nxt


def embed_interaction(
    store, irt, concepts, responses, exercises, lengths, *, train, rng=None, guess_in_eval=False
):
    if irt == "NI":
        return embed_ni(store, concepts, responses)[1]
    if irt == "1PL":
        return embed_interaction_1pl(store, concepts, responses, exercises)
    if irt == "2PL":
        return embed_interaction_2pl(store, concepts, responses, exercises)
    if irt == "3PL":
        return embed_interaction_3pl(
            store,
            concepts,
            responses,
            exercises,
            next_concepts_for(concepts, lengths),
            train=train,
            rng=rng,
            guess_in_eval=guess_in_eval,
        )
    raise ContractError(f"unknown irt level {irt!r}")

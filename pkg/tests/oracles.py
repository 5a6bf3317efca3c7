"""Independent reference computations used by the tests.

Nothing here calls into the package's inference code: linear-Gaussian
models are handled with dense matrix algebra and discrete models by brute
enumeration of every exogenous assignment.
"""

from __future__ import annotations

import itertools
import math

import numpy as np

from causal_mine.scm import Categorical, Const, EndogenousVar, ExogenousVar, Gate, Gaussian, Linear, Noise, Scm, Table, build, var


def random_linear_gaussian(rng: np.random.Generator, n_nodes: int, density: float = 0.6) -> Scm:
    """Random linear-Gaussian chain-ordered SCM with ``n_nodes`` variables."""
    endo, exo = [], []
    for i in range(n_nodes):
        parents = [f"X{j}" for j in range(i) if rng.random() < density]
        weights = tuple(float(rng.uniform(-1.5, 1.5)) for _ in parents)
        coef = float(rng.uniform(0.5, 1.5)) * (1 if rng.random() < 0.5 else -1)
        endo.append(
            EndogenousVar(f"X{i}", tuple(parents), Linear(weights, float(rng.uniform(-1, 1)), coef), f"U{i}")
        )
        exo.append(ExogenousVar(f"U{i}", Gaussian(float(rng.uniform(-1, 1)), float(rng.uniform(0.3, 2.0)))))
    return Scm(exo, endo)


def linear_system(scm: Scm, do: dict | None = None):
    """Return (A, c, D, m, S) with V = A (c + D u), u ~ N(m, diag(S))."""
    do = do or {}
    names = [v.name for v in scm.endogenous]
    idx = {n: i for i, n in enumerate(names)}
    n = len(names)
    B = np.zeros((n, n))
    c = np.zeros(n)
    D = np.zeros(n)
    m = np.zeros(n)
    S = np.zeros(n)
    for v in scm.endogenous:
        i = idx[v.name]
        dist = scm.exo(v.noise).dist
        m[i], S[i] = dist.mean, dist.variance
        if v.name in do:
            c[i] = do[v.name]
            continue
        mech = v.mechanism
        for p, w in zip(v.parents, mech.weights):
            B[i, idx[p]] += w
        c[i] = mech.bias
        D[i] = mech.noise_coef
    A = np.linalg.inv(np.eye(n) - B)
    return names, A, c, np.diag(D), m, np.diag(S)


def gaussian_marginal_logpdf(scm: Scm, evidence: dict) -> float:
    names, A, c, D, m, S = linear_system(scm)
    mean = A @ (c + D @ m)
    cov = A @ D @ S @ D.T @ A.T
    obs = [names.index(k) for k in evidence]
    y = np.array(list(evidence.values()))
    mu = mean[obs]
    C = cov[np.ix_(obs, obs)]
    r = y - mu
    sign, logdet = np.linalg.slogdet(C)
    return float(-0.5 * (r @ np.linalg.solve(C, r) + logdet + len(obs) * math.log(2 * math.pi)))


def linear_counterfactual(scm: Scm, evidence: dict, do: dict, query: str) -> float:
    """Closed-form twin-world mean of ``query`` by Gaussian conditioning on u."""
    names, A, c, D, m, S = linear_system(scm)
    obs = [names.index(k) for k in evidence]
    y = np.array(list(evidence.values()))
    M = (A @ D)[obs]  # v_obs = A c + M u
    mu_y = (A @ c)[obs] + M @ m
    Cy = M @ S @ M.T
    K = S @ M.T @ np.linalg.pinv(Cy)
    u_post = m + K @ (y - mu_y)
    names2, A2, c2, D2, _, _ = linear_system(scm, do)
    q = names2.index(query)
    return float((A2 @ (c2 + D2 @ u_post))[q])


def enumerate_exogenous(scm: Scm):
    """Yield (noise assignment, probability) over all categorical noises.

    Gaussian noises must be degenerate.
    """
    names, supports = [], []
    for u in scm.exogenous:
        if isinstance(u.dist, Categorical):
            names.append(u.name)
            supports.append([(float(i), p) for i, p in enumerate(u.dist.probabilities) if p > 0])
        else:
            assert u.dist.variance == 0.0, "enumeration needs discrete noise"
            names.append(u.name)
            supports.append([(u.dist.mean, 1.0)])
    for combo in itertools.product(*supports):
        yield {n: v for n, (v, _) in zip(names, combo)}, math.prod(p for _, p in combo)


def brute_eval(scm: Scm, noise: dict, do: dict | None = None) -> dict:
    """Plain recursive evaluation, independent of compiled programs."""
    from causal_mine.scm import Add, Const, Gate, Mul, Noise, Parent, Table

    do = do or {}
    vals: dict = {}

    def ev(expr, v):
        if isinstance(expr, Const):
            return expr.value
        if isinstance(expr, Parent):
            return get(v.parents[expr.index])
        if isinstance(expr, Noise):
            return noise[v.noise]
        if isinstance(expr, Add):
            return ev(expr.left, v) + ev(expr.right, v)
        if isinstance(expr, Mul):
            return ev(expr.left, v) * ev(expr.right, v)
        if isinstance(expr, Linear):
            return expr.bias + expr.noise_coef * noise[v.noise] + sum(
                w * get(p) for w, p in zip(expr.weights, v.parents)
            )
        if isinstance(expr, Gate):
            return ev(expr.then, v) if ev(expr.condition, v) > expr.threshold else ev(expr.else_, v)
        if isinstance(expr, Table):
            idx = expr.keys if expr.keys is not None else range(len(v.parents))
            key = tuple(float(get(v.parents[i])) for i in idx)
            return dict(expr.entries).get(key, expr.default)
        raise TypeError(expr)

    def get(name):
        if name not in vals:
            vals[name] = do[name] if name in do else ev(scm.var(name).mechanism, scm.var(name))
        return vals[name]

    for v in scm.endogenous:
        get(v.name)
    return vals


def enumerate_pn_ps(scm: Scm, evidence: dict, candidate: str, factual, alt, outcome, context: dict):
    """Exhaustive PN / PS under the package's twin-world definitions.

    PN = P(outcome holds factually and fails under do(candidate=alt) | evidence)
         / P(outcome holds factually | evidence)
    PS = P(outcome holds under do(candidate=factual) | context, outcome fails under do(alt)),
         falling back to P(outcome holds under do(factual) | context) when the
         conditioning event is empty.
    """
    num = den = 0.0
    s_num = s_den = s_all = s_tot = 0.0
    for noise, p in enumerate_exogenous(scm):
        vals = brute_eval(scm, noise)
        if all(abs(vals[k] - v) < 1e-9 for k, v in evidence.items()):
            fact = outcome(vals)
            twin = outcome(brute_eval(scm, noise, {candidate: alt}))
            den += p * fact
            num += p * (fact and not twin)
        if all(abs(vals[k] - v) < 1e-9 for k, v in context.items()):
            base = outcome(brute_eval(scm, noise, {candidate: alt}))
            suff = outcome(brute_eval(scm, noise, {candidate: factual}))
            s_tot += p
            s_all += p * suff
            s_den += p * (not base)
            s_num += p * ((not base) and suff)
    pn = num / den if den > 0 else 0.0
    ps = s_num / s_den if s_den > 0 else s_all / s_tot
    return pn, ps


def random_binary_scm(rng, n_nodes):
    """Each node picks one of two random boolean functions of its parents by a coin."""
    pairs = []
    for i in range(n_nodes):
        parents = [f"X{j}" for j in range(i) if rng.random() < 0.5][:3]
        branches = []
        for _ in range(2):
            entries = {}
            for bits in np.ndindex(*(2,) * len(parents)):
                entries[tuple(float(b) for b in bits)] = float(rng.random() < 0.5)
            branches.append(Table.from_dict(entries, 0.0) if parents else Const(float(rng.random() < 0.5)))
        p = float(rng.uniform(0.1, 0.9))
        pairs.append(var(f"X{i}", parents, Gate(Noise(), 0.5, branches[0], branches[1]), dist=Categorical((1 - p, p))))
    return build(*pairs)


def record_probability(scm: Scm, record: dict) -> float:
    """Exact probability of a partial discrete record by full enumeration."""
    total = 0.0
    for noise, p in enumerate_exogenous(scm):
        vals = brute_eval(scm, noise)
        if all(abs(vals[k] - v) < 1e-9 for k, v in record.items()):
            total += p
    return total


# -- grid-world transition rules, written out directly -------------------------

STEP_DELTAS = {0: (0, -1), 1: (0, 1), 2: (1, 0), 3: (-1, 0)}
WIND_DELTAS = {"N": (0, -1), "S": (0, 1), "E": (1, 0), "W": (-1, 0)}


def grid_outcomes(rows, pos, action, p_act, gust_dir=None, p_w=0.0, r_success=100.0, r_crash=100.0, bump=1.0):
    """Exact list of ((next position, status), reward, probability) for one step.

    Status codes: 0 flying, 1 landed, 2 crashed. ``rows`` is the ASCII
    grid; '#' is a wall and 'H'/'L' are landable. Step cost is 1.
    """
    wall = lambda x, y: rows[y][x] == "#"
    out = []
    x, y = pos
    for ok, p_ok in ((True, p_act), (False, 1.0 - p_act)):
        if p_ok == 0:
            continue
        if ok and action == 5:
            landed = rows[y][x] in "HL"
            out.append((((x, y), 1 if landed else 2), r_success if landed else -r_crash, p_ok))
            continue
        mx, my, r = x, y, -1.0
        if ok and action in STEP_DELTAS:
            dx, dy = STEP_DELTAS[action]
            if wall(x + dx, y + dy):
                r -= bump
            else:
                mx, my = x + dx, y + dy
        pushes = [(None, 1.0)] if gust_dir is None else [(gust_dir, p_w), (None, 1.0 - p_w)]
        for d, p_d in pushes:
            if p_d == 0:
                continue
            if d is None:
                out.append((((mx, my), 0), r, p_ok * p_d))
                continue
            dx, dy = WIND_DELTAS[d]
            if wall(mx + dx, my + dy):
                out.append((((mx, my), 2), -r_crash, p_ok * p_d))
            else:
                out.append((((mx + dx, my + dy), 0), r, p_ok * p_d))
    return out


def grid_kernel(rows, pos, action, p_act, gust_dir=None, p_w=0.0):
    """Distribution of (next position, status) from :func:`grid_outcomes`."""
    out: dict = {}
    for key, _, p in grid_outcomes(rows, pos, action, p_act, gust_dir, p_w):
        out[key] = out.get(key, 0.0) + p
    return out


def grid_q_values(rows, horizon, gamma, p_act=1.0, **rewards):
    """Finite-horizon Q[(pos, action)] by backward induction over flying cells."""
    cells = [(x, y) for y, row in enumerate(rows) for x, c in enumerate(row) if c != "#"]
    v = {c: 0.0 for c in cells}
    q = {}
    for _ in range(horizon):
        q = {}
        for c in cells:
            for a in range(6):
                total = 0.0
                for (nxt, status), r, p in grid_outcomes(rows, c, a, p_act, **rewards):
                    total += p * (r + (gamma * v[nxt] if status == 0 else 0.0))
                q[(c, a)] = total
        v = {c: max(q[(c, a)] for a in range(6)) for c in cells}
    return q

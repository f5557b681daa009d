"""Pure-Python reference backend.

Every numeric kernel lives here in scalar double arithmetic with a fixed
operation order.  The compiled backend (_core.pyx) mirrors this file
statement for statement; both must produce bit-identical doubles on the
same inputs.  That contract is what makes golden values and CSV fingerprints
backend-independent, so treat any edit here as an ABI change: the compiled
twin and the equivalence tests must move with it.

Conventions shared by both backends:

- no numpy, no BLAS; libm tanh/exp/log/sqrt only
- min/max as explicit ternaries (NaN compares false, picks the right arg)
- reductions accumulate left-to-right in index order, scaled once at the end
- RNG is counter-based splitmix64; all u64 arithmetic is mod 2**64
"""

from __future__ import annotations

import math
from array import array

MASK64 = (1 << 64) - 1
_SM_GAMMA = 0x9E3779B97F4A7C15
_DERIVE_SALT = 0x6C62272E07BB0142
_INV_2_53 = 1.0 / 9007199254740992.0

_EXP_HI = 709.782712893384
_INF = math.inf
_NAN = math.nan

# reward VM opcodes; the instruction stream is flat [op, arg, op, arg, ...]
OP_CONST = 0
OP_FEAT = 1
OP_NEG = 2
OP_ABS = 3
OP_EXP = 4
OP_TANH = 5
OP_ADD = 6
OP_SUB = 7
OP_MUL = 8
OP_MIN = 9
OP_MAX = 10
OP_LT = 11
OP_LE = 12
OP_GT = 13
OP_GE = 14
OP_EQ = 15
OP_NE = 16

STACK_CAP = 40

TASK_KEY_DOOR = 0
TASK_LINE_BALANCE = 1

# substream tags hung off a checkpoint's master key
TAG_ACTION = 1
TAG_EPISODE = 2

SCALE_IDENTITY = 0
SCALE_RUNNING = 1
SCALE_AFFINE = 2

# caps let the compiled backend use fixed stack buffers
MAX_OBS = 16
MAX_HIDDEN = 64
MAX_ACTIONS = 16


def _exp(x):
    # C exp() saturates to inf; math.exp raises OverflowError instead
    if x > _EXP_HI:
        return _INF
    return math.exp(x)


def _log(x):
    if x > 0.0:
        return math.log(x)
    if x == 0.0:
        return -_INF
    return _NAN


# ---------------------------------------------------------------------------
# splittable counter RNG


def mix64(z):
    z &= MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def rng_u64(key, counter):
    """Draw `counter` of the stream under `key` (stateless)."""
    return mix64((key + ((counter + 1) * _SM_GAMMA)) & MASK64)


def derive(key, tag):
    """Child stream key; identical (key, tag) always gives the same child."""
    return mix64((mix64(key ^ _DERIVE_SALT) + (tag & MASK64) * _SM_GAMMA) & MASK64)


def uniform01(u):
    """Map a u64 draw to [0, 1) with 53-bit resolution."""
    return (u >> 11) * _INV_2_53


def randbelow(u, n):
    """Map a u64 draw to {0..n-1} via the high-multiply trick (no modulo bias)."""
    return ((u & MASK64) * n) >> 64


# ---------------------------------------------------------------------------
# environments
#
# key_door params: [grid_n, key_r, key_c, door_r, door_c, dist_norm]
# line_balance params: [dt, force, band, pos_max, vel_max, pos0_range, vel0_range]
# state scratch is 4 doubles: key_door [r, c, has_key, door_open],
# line_balance [pos, vel, 0, 0]

KEY_DOOR_OBS = 8
KEY_DOOR_ACTIONS = 4
LINE_OBS = 4
LINE_ACTIONS = 3


def env_dims(task):
    if task == TASK_KEY_DOOR:
        return KEY_DOOR_OBS, KEY_DOOR_ACTIONS
    if task == TASK_LINE_BALANCE:
        return LINE_OBS, LINE_ACTIONS
    raise ValueError("unknown task id %r" % (task,))


def env_reset(task, params, seed_key):
    """Initial state tuple for an episode stream keyed by seed_key."""
    if task == TASK_KEY_DOOR:
        n = int(params[0])
        key_r = int(params[1])
        key_c = int(params[2])
        door_r = int(params[3])
        door_c = int(params[4])
        ncells = n * n - 2
        idx = randbelow(rng_u64(seed_key, 0), ncells)
        k = 0
        rr = 0
        cc = 0
        for r in range(n):
            for c in range(n):
                if r == key_r and c == key_c:
                    continue
                if r == door_r and c == door_c:
                    continue
                if k == idx:
                    rr = r
                    cc = c
                k += 1
        return (float(rr), float(cc), 0.0, 0.0)
    pos0 = params[5]
    vel0 = params[6]
    pos = (2.0 * uniform01(rng_u64(seed_key, 0)) - 1.0) * pos0
    vel = (2.0 * uniform01(rng_u64(seed_key, 1)) - 1.0) * vel0
    return (pos, vel, 0.0, 0.0)


def env_step(task, params, state, action):
    """One transition; returns (new_state, success_flag)."""
    if task == TASK_KEY_DOOR:
        n = int(params[0])
        r = state[0]
        c = state[1]
        has_key = state[2]
        door_open = state[3]
        if action == 0:
            r = r - 1.0 if r > 0.0 else 0.0
        elif action == 1:
            r = r + 1.0 if r < n - 1.0 else n - 1.0
        elif action == 2:
            c = c - 1.0 if c > 0.0 else 0.0
        else:
            c = c + 1.0 if c < n - 1.0 else n - 1.0
        # pickup and unlock both happen on contact; flags never clear
        if r == params[1] and c == params[2]:
            has_key = 1.0
        if r == params[3] and c == params[4] and has_key == 1.0:
            door_open = 1.0
        return (r, c, has_key, door_open), door_open
    dt = params[0]
    force = params[1]
    band = params[2]
    pos_max = params[3]
    vel_max = params[4]
    f = (action - 1.0) * force
    vel = state[1] + dt * f
    if vel > vel_max:
        vel = vel_max
    elif vel < -vel_max:
        vel = -vel_max
    pos = state[0] + dt * vel
    if pos > pos_max:
        pos = pos_max
    elif pos < -pos_max:
        pos = -pos_max
    flag = 1.0 if (pos if pos >= 0.0 else -pos) <= band else 0.0
    return (pos, vel, 0.0, 0.0), flag


def env_obs(task, params, state):
    """Feature vector of a state.  Order is the task's published feature order."""
    if task == TASK_KEY_DOOR:
        n = int(params[0])
        norm = params[5]
        r = state[0]
        c = state[1]
        dk = abs(r - params[1]) + abs(c - params[2])
        dd = abs(r - params[3]) + abs(c - params[4])
        return [
            -dk / norm,
            -dd / norm,
            state[2],
            state[3],
            state[3],
            r / (n - 1.0),
            c / (n - 1.0),
            # door progress gated on carrying: gives the nets a direct
            # carry-phase input instead of asking tanh units to learn the
            # has_key * dist_door interaction from scratch
            state[2] * (-dd / norm),
        ]
    pos = state[0]
    band = params[2]
    flag = 1.0 if (pos if pos >= 0.0 else -pos) <= band else 0.0
    return [pos, state[1], -(pos if pos >= 0.0 else -pos), flag]


# ---------------------------------------------------------------------------
# reward VM


def eval_program(ops, consts, feats):
    """Evaluate one postfix instruction stream against a feature vector."""
    stack = [0.0] * STACK_CAP
    sp = 0
    i = 0
    n = len(ops)
    while i < n:
        op = ops[i]
        arg = ops[i + 1]
        i += 2
        if op == OP_CONST:
            stack[sp] = consts[arg]
            sp += 1
        elif op == OP_FEAT:
            stack[sp] = feats[arg]
            sp += 1
        elif op == OP_NEG:
            stack[sp - 1] = -stack[sp - 1]
        elif op == OP_ABS:
            v = stack[sp - 1]
            stack[sp - 1] = v if v >= 0.0 else -v
        elif op == OP_EXP:
            stack[sp - 1] = _exp(stack[sp - 1])
        elif op == OP_TANH:
            stack[sp - 1] = math.tanh(stack[sp - 1])
        else:
            rhs = stack[sp - 1]
            lhs = stack[sp - 2]
            sp -= 1
            if op == OP_ADD:
                v = lhs + rhs
            elif op == OP_SUB:
                v = lhs - rhs
            elif op == OP_MUL:
                v = lhs * rhs
            elif op == OP_MIN:
                v = lhs if lhs < rhs else rhs
            elif op == OP_MAX:
                v = lhs if lhs > rhs else rhs
            elif op == OP_LT:
                v = 1.0 if lhs < rhs else 0.0
            elif op == OP_LE:
                v = 1.0 if lhs <= rhs else 0.0
            elif op == OP_GT:
                v = 1.0 if lhs > rhs else 0.0
            elif op == OP_GE:
                v = 1.0 if lhs >= rhs else 0.0
            elif op == OP_EQ:
                v = 1.0 if lhs == rhs else 0.0
            else:
                v = 1.0 if lhs != rhs else 0.0
            stack[sp - 1] = v
    return stack[0]


def transform_apply(mode, scale_state, x):
    """Apply one scale-transform step.  Mutates scale_state for running mode.

    scale_state layout: [count, mean, m2, affine_scale, affine_shift].
    Running mode emits 0.0 until two samples have been seen.
    """
    if mode == SCALE_IDENTITY:
        return x
    if mode == SCALE_RUNNING:
        count = scale_state[0] + 1.0
        scale_state[0] = count
        if count == 1.0:
            scale_state[1] = x
            scale_state[2] = 0.0
            return 0.0
        delta = x - scale_state[1]
        mean = scale_state[1] + delta / count
        scale_state[1] = mean
        scale_state[2] = scale_state[2] + delta * (x - mean)
        var = scale_state[2] / (count - 1.0)
        return (x - mean) / math.sqrt(var + 1e-8)
    return x * scale_state[3] + scale_state[4]


# ---------------------------------------------------------------------------
# MLP forward / backward
#
# flat layout per net: [W1 (h1 x d, row-major), b1, W2 (h2 x h1), b2,
# W3 (out x h2), b3]


def net_param_count(d_in, h1, h2, d_out):
    return h1 * d_in + h1 + h2 * h1 + h2 + d_out * h2 + d_out


def _forward(params, d_in, h1, h2, d_out, x, h1v, h2v, out):
    base = 0
    for j in range(h1):
        acc = params[h1 * d_in + j]
        row = j * d_in
        for i in range(d_in):
            acc += params[row + i] * x[i]
        h1v[j] = math.tanh(acc)
    base = h1 * d_in + h1
    for j in range(h2):
        acc = params[base + h2 * h1 + j]
        row = base + j * h1
        for i in range(h1):
            acc += params[row + i] * h1v[i]
        h2v[j] = math.tanh(acc)
    base = base + h2 * h1 + h2
    for j in range(d_out):
        acc = params[base + d_out * h2 + j]
        row = base + j * h2
        for i in range(h2):
            acc += params[row + i] * h2v[i]
        out[j] = acc


def policy_logits(policy, dims, obs, out):
    """Logits for one observation (test/debug entry point)."""
    d, h1, h2, na = int(dims[0]), int(dims[1]), int(dims[2]), int(dims[3])
    h1v = [0.0] * h1
    h2v = [0.0] * h2
    o = [0.0] * na
    _forward(policy, d, h1, h2, na, list(obs), h1v, h2v, o)
    for j in range(na):
        out[j] = o[j]


def critic_value(critic, dims, obs):
    """Scalar value head for one observation."""
    d, h1, h2 = int(dims[0]), int(dims[1]), int(dims[2])
    h1v = [0.0] * h1
    h2v = [0.0] * h2
    o = [0.0]
    _forward(critic, d, h1, h2, 1, list(obs), h1v, h2v, o)
    return o[0]


def _backward(params, grad, d_in, h1, h2, d_out, x, h1v, h2v, dout):
    """Accumulate dLoss/dparams into grad given dLoss/dout.  Returns nothing."""
    b2off = h1 * d_in + h1
    b3off = b2off + h2 * h1 + h2
    dh2 = [0.0] * h2
    for j in range(d_out):
        g = dout[j]
        row = b3off + j * h2
        for i in range(h2):
            grad[row + i] += g * h2v[i]
            dh2[i] += params[row + i] * g
        grad[b3off + d_out * h2 + j] += g
    dh1 = [0.0] * h1
    for j in range(h2):
        t = h2v[j]
        g = dh2[j] * (1.0 - t * t)
        row = b2off + j * h1
        for i in range(h1):
            grad[row + i] += g * h1v[i]
            dh1[i] += params[row + i] * g
        grad[b2off + h2 * h1 + j] += g
    for j in range(h1):
        t = h1v[j]
        g = dh1[j] * (1.0 - t * t)
        row = j * d_in
        for i in range(d_in):
            grad[row + i] += g * x[i]
        grad[h1 * d_in + j] += g


def _softmax_parts(logits, na, e):
    """Shared softmax pieces: returns (max_logit, sum_exp, sum_exp_weighted)."""
    m = logits[0]
    for i in range(1, na):
        if logits[i] > m:
            m = logits[i]
    s = 0.0
    se = 0.0
    for i in range(na):
        v = _exp(logits[i] - m)
        e[i] = v
        s += v
        se += v * (logits[i] - m)
    return m, s, se


def policy_loss_and_grad(policy, dims, obs_flat, acts, old_logp, adv,
                         clip, ent_coef, out_grad):
    """Clipped-surrogate loss (with entropy bonus) and its gradient.

    Batch arrays are flat; samples are processed in order and the mean scale
    is applied once at the end.  Returns the scalar loss.
    """
    d, h1, h2, na = int(dims[0]), int(dims[1]), int(dims[2]), int(dims[3])
    n = len(acts)
    for i in range(len(out_grad)):
        out_grad[i] = 0.0
    grad = [0.0] * len(out_grad)
    pol = list(policy)
    h1v = [0.0] * h1
    h2v = [0.0] * h2
    logits = [0.0] * na
    e = [0.0] * na
    dlog = [0.0] * na
    x = [0.0] * d
    loss = 0.0
    lo = 1.0 - clip
    hi = 1.0 + clip
    for k in range(n):
        base = k * d
        for i in range(d):
            x[i] = obs_flat[base + i]
        _forward(pol, d, h1, h2, na, x, h1v, h2v, logits)
        m, s, se = _softmax_parts(logits, na, e)
        logs = _log(s)
        a = acts[k]
        lp = (logits[a] - m) - logs
        ent = logs - se / s
        ratio = _exp(lp - old_logp[k])
        rc = ratio
        if rc < lo:
            rc = lo
        elif rc > hi:
            rc = hi
        s1 = ratio * adv[k]
        s2 = rc * adv[k]
        if s1 <= s2:
            obj = s1
            dobj_dlp = ratio * adv[k]
        else:
            obj = s2
            dobj_dlp = 0.0
        loss += -obj - ent_coef * ent
        for i in range(na):
            p = e[i] / s
            ind = 1.0 if i == a else 0.0
            g = -dobj_dlp * (ind - p)
            if p > 0.0:
                lpi = (logits[i] - m) - logs
                g += ent_coef * p * (lpi + ent)
            dlog[i] = g
        _backward(pol, grad, d, h1, h2, na, x, h1v, h2v, dlog)
    inv = 1.0 / n
    for i in range(len(out_grad)):
        out_grad[i] = grad[i] * inv
    return loss * inv


def critic_loss_and_grad(critic, dims, obs_flat, rets, vf_coef, out_grad):
    """Value-head squared-error loss (vf_coef * mean (v - R)^2) and gradient."""
    d, h1, h2 = int(dims[0]), int(dims[1]), int(dims[2])
    n = len(rets)
    grad = [0.0] * len(out_grad)
    cr = list(critic)
    h1v = [0.0] * h1
    h2v = [0.0] * h2
    out = [0.0]
    dout = [0.0]
    x = [0.0] * d
    loss = 0.0
    for k in range(n):
        base = k * d
        for i in range(d):
            x[i] = obs_flat[base + i]
        _forward(cr, d, h1, h2, 1, x, h1v, h2v, out)
        diff = out[0] - rets[k]
        loss += vf_coef * diff * diff
        dout[0] = vf_coef * 2.0 * diff
        _backward(cr, grad, d, h1, h2, 1, x, h1v, h2v, dout)
    inv = 1.0 / n
    for i in range(len(out_grad)):
        out_grad[i] = grad[i] * inv
    return loss * inv


# ---------------------------------------------------------------------------
# training


def _reward_value(ops1, consts1, ops2, consts2, alpha, feats):
    raw = eval_program(ops1, consts1, feats)
    if len(ops2) > 0:
        raw2 = eval_program(ops2, consts2, feats)
        raw = (1.0 - alpha) * raw + alpha * raw2
    return raw


def _blend_alpha(t, t0, t1):
    if t1 <= t0:
        return 1.0 if t >= t1 else 0.0
    a = (t - t0) / (t1 - t0)
    if a < 0.0:
        a = 0.0
    elif a > 1.0:
        a = 1.0
    return a


def _adam_step(params, m, v, g, lr, b1, b2, eps, b1pow, b2pow):
    c1 = 1.0 - b1pow
    c2 = 1.0 - b2pow
    for i in range(len(params)):
        gi = g[i]
        mi = b1 * m[i] + (1.0 - b1) * gi
        vi = b2 * v[i] + (1.0 - b2) * gi * gi
        m[i] = mi
        v[i] = vi
        params[i] -= lr * (mi / c1) / (math.sqrt(vi / c2) + eps)


def _all_finite(xs):
    for v in xs:
        if not (v == v) or v == _INF or v == -_INF:
            return False
    return True


def train_updates(policy, critic, pm, pv, cm, cv, opt, dims,
                  task, horizon, env_params, rng,
                  ops1, consts1, ops2, consts2, blend,
                  scale_mode, scale_state, pot, pot_gamma,
                  tcfg, n_updates, start_update,
                  out_reward_mean, out_vabs):
    """Run n_updates of rollout + clipped-surrogate updates in place.

    Returns -1 on success or the index of the update where training diverged
    (parameters are restored to the last completed update in that case).

    tcfg: [gamma, lam, clip, lr, beta1, beta2, adam_eps, ent_coef, vf_coef,
           episodes_per_update, epochs, adv_norm]
    rng: [master_key, action_counter, episode_counter] (u64, mutated)
    """
    d, h1, h2, na = int(dims[0]), int(dims[1]), int(dims[2]), int(dims[3])
    gamma = tcfg[0]
    lam = tcfg[1]
    clip = tcfg[2]
    lr = tcfg[3]
    b1 = tcfg[4]
    b2 = tcfg[5]
    eps = tcfg[6]
    ent_coef = tcfg[7]
    vf_coef = tcfg[8]
    n_ep = int(tcfg[9])
    n_epochs = int(tcfg[10])
    adv_norm = tcfg[11] != 0.0

    pol = list(policy)
    cri = list(critic)
    pml = list(pm)
    pvl = list(pv)
    cml = list(cm)
    cvl = list(cv)
    parl = list(env_params)
    npol = len(pol)
    ncri = len(cri)

    key = rng[0]
    act_ctr = rng[1]
    ep_ctr = rng[2]
    act_key = derive(key, TAG_ACTION)
    ep_key_base = derive(key, TAG_EPISODE)

    has_blend = len(ops2) > 0
    has_pot = len(pot) > 0
    potl = list(pot) if has_pot else None

    h1v = [0.0] * h1
    h2v = [0.0] * h2
    logits = [0.0] * na
    e = [0.0] * na
    vout = [0.0]
    dlog = [0.0] * na
    dvout = [0.0]

    lo = 1.0 - clip
    hi = 1.0 + clip

    diverged_at = -1
    for u in range(n_updates):
        t_global = start_update + u
        alpha = _blend_alpha(float(t_global), blend[0], blend[1]) if has_blend else 0.0

        pol_save = pol[:]
        cri_save = cri[:]
        pm_save = pml[:]
        pv_save = pvl[:]
        cm_save = cml[:]
        cv_save = cvl[:]
        opt_save = (opt[0], opt[1], opt[2])
        rng_save = (act_ctr, ep_ctr)

        bobs = []
        bacts = []
        boldlp = []
        badv = []
        bret = []
        rew_sum = 0.0
        vabs = 0.0

        for _ in range(n_ep):
            ep_key = derive(ep_key_base, ep_ctr)
            ep_ctr = (ep_ctr + 1) & MASK64
            state = env_reset(task, parl, ep_key)
            obs = env_obs(task, parl, state)
            ep_obs = []
            ep_acts = []
            ep_r = []
            ep_v = []
            ep_lp = []
            for _t in range(horizon):
                _forward(pol, d, h1, h2, na, obs, h1v, h2v, logits)
                _forward(cri, d, h1, h2, 1, obs, h1v, h2v, vout)
                val = vout[0]
                av = val if val >= 0.0 else -val
                if av > vabs:
                    vabs = av
                m, s, se = _softmax_parts(logits, na, e)
                logs = _log(s)
                uu = uniform01(rng_u64(act_key, act_ctr))
                act_ctr = (act_ctr + 1) & MASK64
                thr = uu * s
                acc = 0.0
                a = na - 1
                for i in range(na):
                    acc += e[i]
                    if thr < acc:
                        a = i
                        break
                lp = (logits[a] - m) - logs
                state, _flag = env_step(task, parl, state, a)
                nobs = env_obs(task, parl, state)
                raw = _reward_value(ops1, consts1, ops2, consts2, alpha, nobs)
                r = transform_apply(scale_mode, scale_state, raw)
                if has_pot:
                    _forward(potl, d, h1, h2, 1, nobs, h1v, h2v, vout)
                    phi_next = vout[0]
                    _forward(potl, d, h1, h2, 1, obs, h1v, h2v, vout)
                    phi_cur = vout[0]
                    r = r + pot_gamma * phi_next - phi_cur
                ep_obs.append(obs)
                ep_acts.append(a)
                ep_r.append(r)
                ep_v.append(val)
                ep_lp.append(lp)
                rew_sum += r
                obs = nobs
                if task == TASK_KEY_DOOR and state[3] == 1.0:
                    break
            acc_a = 0.0
            T = len(ep_r)
            ep_adv = [0.0] * T
            for t in range(T - 1, -1, -1):
                nextv = ep_v[t + 1] if t + 1 < T else 0.0
                delta = ep_r[t] + gamma * nextv - ep_v[t]
                acc_a = delta + gamma * lam * acc_a
                ep_adv[t] = acc_a
            for t in range(T):
                bobs.append(ep_obs[t])
                bacts.append(ep_acts[t])
                boldlp.append(ep_lp[t])
                badv.append(ep_adv[t])
                bret.append(ep_adv[t] + ep_v[t])

        nb = len(bacts)
        if adv_norm:
            mean_a = 0.0
            for t in range(nb):
                mean_a += badv[t]
            mean_a /= nb
            var_a = 0.0
            for t in range(nb):
                dd = badv[t] - mean_a
                var_a += dd * dd
            var_a /= nb
            inv_a = 1.0 / math.sqrt(var_a + 1e-8)
            for t in range(nb):
                badv[t] = (badv[t] - mean_a) * inv_a

        bad = False
        for _ep in range(n_epochs):
            pgrad = [0.0] * npol
            cgrad = [0.0] * ncri
            ploss = 0.0
            closs = 0.0
            for k in range(nb):
                x = bobs[k]
                _forward(pol, d, h1, h2, na, x, h1v, h2v, logits)
                m, s, se = _softmax_parts(logits, na, e)
                logs = _log(s)
                a = bacts[k]
                lp = (logits[a] - m) - logs
                ent = logs - se / s
                ratio = _exp(lp - boldlp[k])
                rc = ratio
                if rc < lo:
                    rc = lo
                elif rc > hi:
                    rc = hi
                s1 = ratio * badv[k]
                s2 = rc * badv[k]
                if s1 <= s2:
                    obj = s1
                    dobj_dlp = ratio * badv[k]
                else:
                    obj = s2
                    dobj_dlp = 0.0
                ploss += -obj - ent_coef * ent
                for i in range(na):
                    p = e[i] / s
                    ind = 1.0 if i == a else 0.0
                    g = -dobj_dlp * (ind - p)
                    if p > 0.0:
                        lpi = (logits[i] - m) - logs
                        g += ent_coef * p * (lpi + ent)
                    dlog[i] = g
                _backward(pol, pgrad, d, h1, h2, na, x, h1v, h2v, dlog)
                _forward(cri, d, h1, h2, 1, x, h1v, h2v, vout)
                diff = vout[0] - bret[k]
                closs += vf_coef * diff * diff
                dvout[0] = vf_coef * 2.0 * diff
                _backward(cri, cgrad, d, h1, h2, 1, x, h1v, h2v, dvout)
            invn = 1.0 / nb
            for i in range(npol):
                pgrad[i] *= invn
            for i in range(ncri):
                cgrad[i] *= invn
            ploss *= invn
            closs *= invn
            tot = ploss + closs
            if not (tot == tot) or tot == _INF or tot == -_INF:
                bad = True
                break
            opt[0] = opt[0] + 1.0
            opt[1] = opt[1] * b1
            opt[2] = opt[2] * b2
            _adam_step(pol, pml, pvl, pgrad, lr, b1, b2, eps, opt[1], opt[2])
            _adam_step(cri, cml, cvl, cgrad, lr, b1, b2, eps, opt[1], opt[2])
            if not (_all_finite(pol) and _all_finite(cri)):
                bad = True
                break

        out_reward_mean[u] = rew_sum / nb
        out_vabs[u] = vabs
        if bad:
            pol = pol_save
            cri = cri_save
            pml = pm_save
            pvl = pv_save
            cml = cm_save
            cvl = cv_save
            opt[0], opt[1], opt[2] = opt_save
            act_ctr, ep_ctr = rng_save
            diverged_at = u
            break

    for i in range(npol):
        policy[i] = pol[i]
        pm[i] = pml[i]
        pv[i] = pvl[i]
    for i in range(ncri):
        critic[i] = cri[i]
        cm[i] = cml[i]
        cv[i] = cvl[i]
    rng[1] = act_ctr
    rng[2] = ep_ctr
    return diverged_at


# ---------------------------------------------------------------------------
# evaluation


def evaluate(policy, dims, task, horizon, env_params, ep_keys,
             out_success, out_consec):
    """Greedy rollouts, one per entry of ep_keys.

    Episode success: key_door 1.0 iff the door ever opens, line_balance the
    fraction of in-band steps.  out_consec gets max consecutive successful
    steps normalized by horizon.
    """
    d, h1, h2, na = int(dims[0]), int(dims[1]), int(dims[2]), int(dims[3])
    pol = list(policy)
    parl = list(env_params)
    h1v = [0.0] * h1
    h2v = [0.0] * h2
    logits = [0.0] * na
    for idx in range(len(ep_keys)):
        state = env_reset(task, parl, ep_keys[idx])
        obs = env_obs(task, parl, state)
        flag_sum = 0.0
        run = 0
        best = 0
        last_flag = 0.0
        for _t in range(horizon):
            _forward(pol, d, h1, h2, na, obs, h1v, h2v, logits)
            a = 0
            bestl = logits[0]
            for i in range(1, na):
                if logits[i] > bestl:
                    bestl = logits[i]
                    a = i
            state, flag = env_step(task, parl, state, a)
            obs = env_obs(task, parl, state)
            flag_sum += flag
            if flag > 0.5:
                run += 1
                if run > best:
                    best = run
            else:
                run = 0
            last_flag = flag
            if task == TASK_KEY_DOOR and state[3] == 1.0:
                break
        if task == TASK_KEY_DOOR:
            out_success[idx] = last_flag
        else:
            out_success[idx] = flag_sum / horizon
        out_consec[idx] = best / float(horizon)


def random_rollout_rewards(task, horizon, env_params, ops, consts,
                           n_episodes, seed_key, out):
    """Raw (pre-transform) rewards under a uniform-random policy.

    Used to calibrate matched-scale transforms.  Fills a prefix of out
    (capacity n_episodes * horizon; episodes that finish early contribute
    fewer samples) and returns the number of values written.
    """
    _d, na = env_dims(task)
    parl = list(env_params)
    w = 0
    for epi in range(n_episodes):
        ep_key = derive(seed_key, epi)
        act_key = derive(ep_key, TAG_ACTION)
        state = env_reset(task, parl, ep_key)
        for t in range(horizon):
            a = randbelow(rng_u64(act_key, t), na)
            state, _flag = env_step(task, parl, state, a)
            feats = env_obs(task, parl, state)
            out[w] = eval_program(ops, consts, feats)
            w += 1
            if task == TASK_KEY_DOOR and state[3] == 1.0:
                break
    return w


def backend_name():
    return "pyref"


def make_f64(n):
    return array("d", bytes(8 * n))

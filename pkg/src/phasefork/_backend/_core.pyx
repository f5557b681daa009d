# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled twin of pyref.py.

This file transliterates the reference backend statement for statement.
Operation order, guard semantics, and libm usage must match exactly; any
divergence shows up as a fingerprint mismatch in the equivalence tests.
Built with -ffp-contract=off so no FMA contraction changes the doubles.
"""

from libc.math cimport exp, fabs, log, sqrt, tanh
from libc.stdlib cimport free, malloc
from libc.string cimport memcpy

ctypedef unsigned long long u64
ctypedef long long i64

cdef extern from *:
    ctypedef unsigned long long u128 "__uint128_t"

cdef double _INF = float("inf")
cdef double _NAN = float("nan")

cdef double _EXP_HI = 709.782712893384
cdef double _INV_2_53 = 1.0 / 9007199254740992.0

cdef u64 _SM_GAMMA = 0x9E3779B97F4A7C15ULL
cdef u64 _DERIVE_SALT = 0x6C62272E07BB0142ULL

DEF OP_CONST = 0
DEF OP_FEAT = 1
DEF OP_NEG = 2
DEF OP_ABS = 3
DEF OP_EXP = 4
DEF OP_TANH = 5
DEF OP_ADD = 6
DEF OP_SUB = 7
DEF OP_MUL = 8
DEF OP_MIN = 9
DEF OP_MAX = 10
DEF OP_LT = 11
DEF OP_LE = 12
DEF OP_GT = 13
DEF OP_GE = 14
DEF OP_EQ = 15
DEF OP_NE = 16

DEF STACK_CAP = 40
DEF MAX_OBS = 16
DEF MAX_HIDDEN = 64
DEF MAX_ACTIONS = 16

DEF TASK_KEY_DOOR = 0

DEF TAG_ACTION = 1
DEF TAG_EPISODE = 2

DEF SCALE_IDENTITY = 0
DEF SCALE_RUNNING = 1
DEF SCALE_AFFINE = 2


cdef inline double _exp_c(double x) nogil:
    if x > _EXP_HI:
        return _INF
    return exp(x)


cdef inline double _log_c(double x) nogil:
    if x > 0.0:
        return log(x)
    if x == 0.0:
        return -_INF
    return _NAN


cdef inline bint _finite(double v) nogil:
    if not (v == v):
        return 0
    if v == _INF or v == -_INF:
        return 0
    return 1


# ---------------------------------------------------------------------------
# RNG

cdef inline u64 _mix64(u64 z) nogil:
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL
    return z ^ (z >> 31)


cdef inline u64 _rng_u64(u64 key, u64 counter) nogil:
    return _mix64(key + (counter + 1) * _SM_GAMMA)


cdef inline u64 _derive(u64 key, u64 tag) nogil:
    return _mix64(_mix64(key ^ _DERIVE_SALT) + tag * _SM_GAMMA)


cdef inline double _uniform01(u64 u) nogil:
    return <double> (u >> 11) * _INV_2_53


cdef inline Py_ssize_t _randbelow(u64 u, Py_ssize_t n) nogil:
    return <Py_ssize_t> ((<u128> u * <u64> n) >> 64)


# ---------------------------------------------------------------------------
# environments

cdef inline void _env_reset(int task, double* params, u64 seed_key,
                            double* state) nogil:
    cdef int n, key_r, key_c, door_r, door_c, ncells, k, r, c, rr, cc
    cdef Py_ssize_t idx
    cdef double pos0, vel0
    if task == TASK_KEY_DOOR:
        n = <int> params[0]
        key_r = <int> params[1]
        key_c = <int> params[2]
        door_r = <int> params[3]
        door_c = <int> params[4]
        ncells = n * n - 2
        idx = _randbelow(_rng_u64(seed_key, 0), ncells)
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
        state[0] = <double> rr
        state[1] = <double> cc
        state[2] = 0.0
        state[3] = 0.0
    else:
        pos0 = params[5]
        vel0 = params[6]
        state[0] = (2.0 * _uniform01(_rng_u64(seed_key, 0)) - 1.0) * pos0
        state[1] = (2.0 * _uniform01(_rng_u64(seed_key, 1)) - 1.0) * vel0
        state[2] = 0.0
        state[3] = 0.0


cdef inline double _env_step(int task, double* params, double* state,
                             int action) nogil:
    """Advance state in place; returns the success flag."""
    cdef double n, r, c, has_key, door_open
    cdef double dt, force, band, pos_max, vel_max, f, vel, pos, a
    if task == TASK_KEY_DOOR:
        n = params[0]
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
        state[0] = r
        state[1] = c
        state[2] = has_key
        state[3] = door_open
        return door_open
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
    state[0] = pos
    state[1] = vel
    state[2] = 0.0
    state[3] = 0.0
    a = pos if pos >= 0.0 else -pos
    return 1.0 if a <= band else 0.0


cdef inline void _env_obs(int task, double* params, double* state,
                          double* obs) nogil:
    cdef double n, norm, r, c, dk, dd, pos, band, a
    if task == TASK_KEY_DOOR:
        n = params[0]
        norm = params[5]
        r = state[0]
        c = state[1]
        dk = fabs(r - params[1]) + fabs(c - params[2])
        dd = fabs(r - params[3]) + fabs(c - params[4])
        obs[0] = -dk / norm
        obs[1] = -dd / norm
        obs[2] = state[2]
        obs[3] = state[3]
        obs[4] = state[3]
        obs[5] = r / (n - 1.0)
        obs[6] = c / (n - 1.0)
        # carry-gated door progress; keep in sync with the reference backend
        obs[7] = state[2] * (-dd / norm)
    else:
        pos = state[0]
        band = params[2]
        a = pos if pos >= 0.0 else -pos
        obs[0] = pos
        obs[1] = state[1]
        obs[2] = -a
        obs[3] = 1.0 if a <= band else 0.0


cdef inline int _env_obs_dim(int task) nogil:
    return 8 if task == TASK_KEY_DOOR else 4


# ---------------------------------------------------------------------------
# reward VM

cdef inline double _vm(i64* ops, Py_ssize_t nops, double* consts,
                       double* feats) nogil:
    cdef double stack[STACK_CAP]
    cdef Py_ssize_t sp = 0
    cdef Py_ssize_t i = 0
    cdef i64 op, arg
    cdef double v, lhs, rhs
    while i < nops:
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
            stack[sp - 1] = _exp_c(stack[sp - 1])
        elif op == OP_TANH:
            stack[sp - 1] = tanh(stack[sp - 1])
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


cdef inline double _transform(int mode, double* ss, double x) nogil:
    cdef double count, delta, mean, var
    if mode == SCALE_IDENTITY:
        return x
    if mode == SCALE_RUNNING:
        count = ss[0] + 1.0
        ss[0] = count
        if count == 1.0:
            ss[1] = x
            ss[2] = 0.0
            return 0.0
        delta = x - ss[1]
        mean = ss[1] + delta / count
        ss[1] = mean
        ss[2] = ss[2] + delta * (x - mean)
        var = ss[2] / (count - 1.0)
        return (x - mean) / sqrt(var + 1e-8)
    return x * ss[3] + ss[4]


cdef inline double _reward_value(i64* ops1, Py_ssize_t n1, double* consts1,
                                 i64* ops2, Py_ssize_t n2, double* consts2,
                                 double alpha, double* feats) nogil:
    cdef double raw = _vm(ops1, n1, consts1, feats)
    cdef double raw2
    if n2 > 0:
        raw2 = _vm(ops2, n2, consts2, feats)
        raw = (1.0 - alpha) * raw + alpha * raw2
    return raw


cdef inline double _blend_alpha(double t, double t0, double t1) nogil:
    cdef double a
    if t1 <= t0:
        return 1.0 if t >= t1 else 0.0
    a = (t - t0) / (t1 - t0)
    if a < 0.0:
        a = 0.0
    elif a > 1.0:
        a = 1.0
    return a


# ---------------------------------------------------------------------------
# MLP forward / backward

cdef inline void _fwd(double* params, int d_in, int h1, int h2, int d_out,
                      double* x, double* h1v, double* h2v, double* out) nogil:
    cdef int i, j, base, row
    cdef double acc
    for j in range(h1):
        acc = params[h1 * d_in + j]
        row = j * d_in
        for i in range(d_in):
            acc += params[row + i] * x[i]
        h1v[j] = tanh(acc)
    base = h1 * d_in + h1
    for j in range(h2):
        acc = params[base + h2 * h1 + j]
        row = base + j * h1
        for i in range(h1):
            acc += params[row + i] * h1v[i]
        h2v[j] = tanh(acc)
    base = base + h2 * h1 + h2
    for j in range(d_out):
        acc = params[base + d_out * h2 + j]
        row = base + j * h2
        for i in range(h2):
            acc += params[row + i] * h2v[i]
        out[j] = acc


cdef inline void _bwd(double* params, double* grad, int d_in, int h1, int h2,
                      int d_out, double* x, double* h1v, double* h2v,
                      double* dout) nogil:
    cdef int i, j, row
    cdef int b2off = h1 * d_in + h1
    cdef int b3off = b2off + h2 * h1 + h2
    cdef double dh2[MAX_HIDDEN]
    cdef double dh1[MAX_HIDDEN]
    cdef double g, t
    for i in range(h2):
        dh2[i] = 0.0
    for j in range(d_out):
        g = dout[j]
        row = b3off + j * h2
        for i in range(h2):
            grad[row + i] += g * h2v[i]
            dh2[i] += params[row + i] * g
        grad[b3off + d_out * h2 + j] += g
    for i in range(h1):
        dh1[i] = 0.0
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


cdef inline void _softmax_parts(double* logits, int na, double* e,
                                double* out_m, double* out_s,
                                double* out_se) nogil:
    cdef double m = logits[0]
    cdef double s = 0.0
    cdef double se = 0.0
    cdef double v
    cdef int i
    for i in range(1, na):
        if logits[i] > m:
            m = logits[i]
    for i in range(na):
        v = _exp_c(logits[i] - m)
        e[i] = v
        s += v
        se += v * (logits[i] - m)
    out_m[0] = m
    out_s[0] = s
    out_se[0] = se


cdef inline void _adam(double* params, double* m, double* v, double* g,
                       Py_ssize_t n, double lr, double b1, double b2,
                       double eps, double b1pow, double b2pow) nogil:
    cdef double c1 = 1.0 - b1pow
    cdef double c2 = 1.0 - b2pow
    cdef double gi, mi, vi
    cdef Py_ssize_t i
    for i in range(n):
        gi = g[i]
        mi = b1 * m[i] + (1.0 - b1) * gi
        vi = b2 * v[i] + (1.0 - b2) * gi * gi
        m[i] = mi
        v[i] = vi
        params[i] -= lr * (mi / c1) / (sqrt(vi / c2) + eps)


cdef inline bint _all_finite(double* xs, Py_ssize_t n) nogil:
    cdef Py_ssize_t i
    for i in range(n):
        if not _finite(xs[i]):
            return 0
    return 1


# ---------------------------------------------------------------------------
# python-visible entry points (signatures mirror pyref)


def backend_name():
    return "compiled"


def env_reset(int task, double[::1] params, seed_key):
    cdef double state[4]
    cdef u64 sk = <u64> seed_key
    _env_reset(task, &params[0], sk, state)
    return (state[0], state[1], state[2], state[3])


def env_step(int task, double[::1] params, state, int action):
    cdef double st[4]
    st[0] = state[0]
    st[1] = state[1]
    st[2] = state[2]
    st[3] = state[3]
    cdef double flag = _env_step(task, &params[0], st, action)
    return (st[0], st[1], st[2], st[3]), flag


def env_obs(int task, double[::1] params, state):
    cdef double st[4]
    cdef double obs[MAX_OBS]
    st[0] = state[0]
    st[1] = state[1]
    st[2] = state[2]
    st[3] = state[3]
    _env_obs(task, &params[0], st, obs)
    cdef int d = _env_obs_dim(task)
    return [obs[i] for i in range(d)]


def eval_program(ops, consts, feats):
    cdef i64 cops[2 * STACK_CAP * 2]
    cdef double ccon[STACK_CAP * 2]
    cdef double cfeat[MAX_OBS]
    cdef Py_ssize_t nops = len(ops)
    cdef Py_ssize_t i
    if nops > 2 * STACK_CAP * 2:
        raise ValueError("instruction stream too long for compiled backend")
    if len(consts) > STACK_CAP * 2:
        raise ValueError("constant pool too large for compiled backend")
    if len(feats) > MAX_OBS:
        raise ValueError("feature vector too long for compiled backend")
    for i in range(nops):
        cops[i] = ops[i]
    for i in range(len(consts)):
        ccon[i] = consts[i]
    for i in range(len(feats)):
        cfeat[i] = feats[i]
    return _vm(cops, nops, ccon, cfeat)


def transform_apply(int mode, double[::1] scale_state, double x):
    return _transform(mode, &scale_state[0], x)


def policy_logits(double[::1] policy, i64[::1] dims, obs, double[::1] out):
    cdef int d = <int> dims[0]
    cdef int h1 = <int> dims[1]
    cdef int h2 = <int> dims[2]
    cdef int na = <int> dims[3]
    cdef double x[MAX_OBS]
    cdef double h1v[MAX_HIDDEN]
    cdef double h2v[MAX_HIDDEN]
    cdef double o[MAX_ACTIONS]
    cdef int i
    _check_dims(d, h1, h2, na)
    for i in range(d):
        x[i] = obs[i]
    _fwd(&policy[0], d, h1, h2, na, x, h1v, h2v, o)
    for i in range(na):
        out[i] = o[i]


def critic_value(double[::1] critic, i64[::1] dims, obs):
    cdef int d = <int> dims[0]
    cdef int h1 = <int> dims[1]
    cdef int h2 = <int> dims[2]
    cdef double x[MAX_OBS]
    cdef double h1v[MAX_HIDDEN]
    cdef double h2v[MAX_HIDDEN]
    cdef double o[1]
    cdef int i
    _check_dims(d, h1, h2, 1)
    for i in range(d):
        x[i] = obs[i]
    _fwd(&critic[0], d, h1, h2, 1, x, h1v, h2v, o)
    return o[0]


def _check_dims(int d, int h1, int h2, int na):
    if d > MAX_OBS or h1 > MAX_HIDDEN or h2 > MAX_HIDDEN or na > MAX_ACTIONS:
        raise ValueError("dims exceed compiled backend caps")
    if d < 1 or h1 < 1 or h2 < 1 or na < 1:
        raise ValueError("dims must be positive")


def policy_loss_and_grad(double[::1] policy, i64[::1] dims,
                         double[::1] obs_flat, acts, double[::1] old_logp,
                         double[::1] adv, double clip, double ent_coef,
                         double[::1] out_grad):
    cdef int d = <int> dims[0]
    cdef int h1 = <int> dims[1]
    cdef int h2 = <int> dims[2]
    cdef int na = <int> dims[3]
    _check_dims(d, h1, h2, na)
    cdef Py_ssize_t n = len(acts)
    cdef Py_ssize_t ng = out_grad.shape[0]
    cdef Py_ssize_t k
    cdef i64* cacts = <i64*> malloc(n * sizeof(i64))
    cdef double* grad = <double*> malloc(ng * sizeof(double))
    if cacts == NULL or grad == NULL:
        free(cacts)
        free(grad)
        raise MemoryError()
    for k in range(n):
        cacts[k] = acts[k]
    cdef double h1v[MAX_HIDDEN]
    cdef double h2v[MAX_HIDDEN]
    cdef double logits[MAX_ACTIONS]
    cdef double e[MAX_ACTIONS]
    cdef double dlog[MAX_ACTIONS]
    cdef double x[MAX_OBS]
    cdef double m, s, se, logs, lp, ent, ratio, rc, s1, s2, obj, dobj_dlp
    cdef double p, ind, g, lpi, inv
    cdef double loss = 0.0
    cdef double lo = 1.0 - clip
    cdef double hi = 1.0 + clip
    cdef int i, a
    cdef Py_ssize_t base
    with nogil:
        for k in range(ng):
            grad[k] = 0.0
        for k in range(n):
            base = k * d
            for i in range(d):
                x[i] = obs_flat[base + i]
            _fwd(&policy[0], d, h1, h2, na, x, h1v, h2v, logits)
            _softmax_parts(logits, na, e, &m, &s, &se)
            logs = _log_c(s)
            a = <int> cacts[k]
            lp = (logits[a] - m) - logs
            ent = logs - se / s
            ratio = _exp_c(lp - old_logp[k])
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
            _bwd(&policy[0], grad, d, h1, h2, na, x, h1v, h2v, dlog)
        inv = 1.0 / n
        for k in range(ng):
            grad[k] = grad[k] * inv
        loss = loss * inv
    for k in range(ng):
        out_grad[k] = grad[k]
    free(cacts)
    free(grad)
    return loss


def critic_loss_and_grad(double[::1] critic, i64[::1] dims,
                         double[::1] obs_flat, double[::1] rets,
                         double vf_coef, double[::1] out_grad):
    cdef int d = <int> dims[0]
    cdef int h1 = <int> dims[1]
    cdef int h2 = <int> dims[2]
    _check_dims(d, h1, h2, 1)
    cdef Py_ssize_t n = rets.shape[0]
    cdef Py_ssize_t ng = out_grad.shape[0]
    cdef Py_ssize_t k
    cdef double* grad = <double*> malloc(ng * sizeof(double))
    if grad == NULL:
        raise MemoryError()
    cdef double h1v[MAX_HIDDEN]
    cdef double h2v[MAX_HIDDEN]
    cdef double x[MAX_OBS]
    cdef double out[1]
    cdef double dout[1]
    cdef double diff, inv
    cdef double loss = 0.0
    cdef int i
    cdef Py_ssize_t base
    with nogil:
        for k in range(ng):
            grad[k] = 0.0
        for k in range(n):
            base = k * d
            for i in range(d):
                x[i] = obs_flat[base + i]
            _fwd(&critic[0], d, h1, h2, 1, x, h1v, h2v, out)
            diff = out[0] - rets[k]
            loss += vf_coef * diff * diff
            dout[0] = vf_coef * 2.0 * diff
            _bwd(&critic[0], grad, d, h1, h2, 1, x, h1v, h2v, dout)
        inv = 1.0 / n
        for k in range(ng):
            grad[k] = grad[k] * inv
        loss = loss * inv
    for k in range(ng):
        out_grad[k] = grad[k]
    free(grad)
    return loss


def evaluate(double[::1] policy, i64[::1] dims, int task, int horizon,
             double[::1] env_params, unsigned long long[::1] ep_keys,
             double[::1] out_success, double[::1] out_consec):
    cdef int d = <int> dims[0]
    cdef int h1 = <int> dims[1]
    cdef int h2 = <int> dims[2]
    cdef int na = <int> dims[3]
    _check_dims(d, h1, h2, na)
    cdef Py_ssize_t n_eps = ep_keys.shape[0]
    cdef double h1v[MAX_HIDDEN]
    cdef double h2v[MAX_HIDDEN]
    cdef double logits[MAX_ACTIONS]
    cdef double state[4]
    cdef double obs[MAX_OBS]
    cdef double flag_sum, last_flag, flag, bestl
    cdef int run, best, a, i, t
    cdef Py_ssize_t idx
    with nogil:
        for idx in range(n_eps):
            _env_reset(task, &env_params[0], ep_keys[idx], state)
            _env_obs(task, &env_params[0], state, obs)
            flag_sum = 0.0
            run = 0
            best = 0
            last_flag = 0.0
            for t in range(horizon):
                _fwd(&policy[0], d, h1, h2, na, obs, h1v, h2v, logits)
                a = 0
                bestl = logits[0]
                for i in range(1, na):
                    if logits[i] > bestl:
                        bestl = logits[i]
                        a = i
                flag = _env_step(task, &env_params[0], state, a)
                _env_obs(task, &env_params[0], state, obs)
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
            out_consec[idx] = best / <double> horizon


def random_rollout_rewards(int task, int horizon, double[::1] env_params,
                           ops, consts, int n_episodes, seed_key,
                           double[::1] out):
    cdef i64 cops[2 * STACK_CAP * 2]
    cdef double ccon[STACK_CAP * 2]
    cdef Py_ssize_t nops = len(ops)
    cdef Py_ssize_t i
    if nops > 2 * STACK_CAP * 2 or len(consts) > STACK_CAP * 2:
        raise ValueError("program too large for compiled backend")
    for i in range(nops):
        cops[i] = ops[i]
    for i in range(len(consts)):
        ccon[i] = consts[i]
    cdef u64 root = <u64> seed_key
    cdef int na = 4 if task == TASK_KEY_DOOR else 3
    cdef double state[4]
    cdef double feats[MAX_OBS]
    cdef u64 ep_key, act_key
    cdef Py_ssize_t w = 0
    cdef int epi, t, a
    with nogil:
        for epi in range(n_episodes):
            ep_key = _derive(root, <u64> epi)
            act_key = _derive(ep_key, TAG_ACTION)
            _env_reset(task, &env_params[0], ep_key, state)
            for t in range(horizon):
                a = <int> _randbelow(_rng_u64(act_key, <u64> t), na)
                _env_step(task, &env_params[0], state, a)
                _env_obs(task, &env_params[0], state, feats)
                out[w] = _vm(cops, nops, ccon, feats)
                w += 1
                if task == TASK_KEY_DOOR and state[3] == 1.0:
                    break
    return w


def train_updates(double[::1] policy, double[::1] critic, double[::1] pm,
                  double[::1] pv, double[::1] cm, double[::1] cv,
                  double[::1] opt, i64[::1] dims, int task, int horizon,
                  double[::1] env_params, unsigned long long[::1] rng,
                  ops1, consts1, ops2, consts2, double[::1] blend,
                  int scale_mode, double[::1] scale_state, double[::1] pot,
                  double pot_gamma, double[::1] tcfg, int n_updates,
                  long long start_update, double[::1] out_reward_mean,
                  double[::1] out_vabs):
    cdef int d = <int> dims[0]
    cdef int h1 = <int> dims[1]
    cdef int h2 = <int> dims[2]
    cdef int na = <int> dims[3]
    _check_dims(d, h1, h2, na)

    cdef double gamma = tcfg[0]
    cdef double lam = tcfg[1]
    cdef double clip = tcfg[2]
    cdef double lr = tcfg[3]
    cdef double b1 = tcfg[4]
    cdef double b2 = tcfg[5]
    cdef double eps = tcfg[6]
    cdef double ent_coef = tcfg[7]
    cdef double vf_coef = tcfg[8]
    cdef int n_ep = <int> tcfg[9]
    cdef int n_epochs = <int> tcfg[10]
    cdef bint adv_norm = tcfg[11] != 0.0

    cdef Py_ssize_t npol = policy.shape[0]
    cdef Py_ssize_t ncri = critic.shape[0]

    # program copies into C buffers
    cdef i64 cops1[2 * STACK_CAP * 2]
    cdef double ccon1[STACK_CAP * 2]
    cdef i64 cops2[2 * STACK_CAP * 2]
    cdef double ccon2[STACK_CAP * 2]
    cdef Py_ssize_t n1 = len(ops1)
    cdef Py_ssize_t n2 = len(ops2)
    cdef Py_ssize_t ii
    if n1 > 2 * STACK_CAP * 2 or n2 > 2 * STACK_CAP * 2:
        raise ValueError("program too large for compiled backend")
    if len(consts1) > STACK_CAP * 2 or len(consts2) > STACK_CAP * 2:
        raise ValueError("constant pool too large for compiled backend")
    for ii in range(n1):
        cops1[ii] = ops1[ii]
    for ii in range(len(consts1)):
        ccon1[ii] = consts1[ii]
    for ii in range(n2):
        cops2[ii] = ops2[ii]
    for ii in range(len(consts2)):
        ccon2[ii] = consts2[ii]

    cdef bint has_blend = n2 > 0
    cdef bint has_pot = pot.shape[0] > 0
    cdef double* potp = &pot[0] if has_pot else NULL

    cdef u64 key = rng[0]
    cdef u64 act_ctr = rng[1]
    cdef u64 ep_ctr = rng[2]
    cdef u64 act_key = _derive(key, TAG_ACTION)
    cdef u64 ep_key_base = _derive(key, TAG_EPISODE)
    cdef u64 ep_key, act_ctr_save, ep_ctr_save

    cdef Py_ssize_t nb_cap = <Py_ssize_t> n_ep * horizon
    cdef double* pol_save = <double*> malloc(npol * sizeof(double))
    cdef double* cri_save = <double*> malloc(ncri * sizeof(double))
    cdef double* pm_save = <double*> malloc(npol * sizeof(double))
    cdef double* pv_save = <double*> malloc(npol * sizeof(double))
    cdef double* cm_save = <double*> malloc(ncri * sizeof(double))
    cdef double* cv_save = <double*> malloc(ncri * sizeof(double))
    cdef double* pgrad = <double*> malloc(npol * sizeof(double))
    cdef double* cgrad = <double*> malloc(ncri * sizeof(double))
    cdef double* bobs = <double*> malloc(nb_cap * d * sizeof(double))
    cdef i64* bacts = <i64*> malloc(nb_cap * sizeof(i64))
    cdef double* boldlp = <double*> malloc(nb_cap * sizeof(double))
    cdef double* badv = <double*> malloc(nb_cap * sizeof(double))
    cdef double* bret = <double*> malloc(nb_cap * sizeof(double))
    cdef double* ep_r = <double*> malloc(horizon * sizeof(double))
    cdef double* ep_v = <double*> malloc(horizon * sizeof(double))
    if (pol_save == NULL or cri_save == NULL or pm_save == NULL or
            pv_save == NULL or cm_save == NULL or cv_save == NULL or
            pgrad == NULL or cgrad == NULL or bobs == NULL or bacts == NULL or
            boldlp == NULL or badv == NULL or bret == NULL or ep_r == NULL or
            ep_v == NULL):
        free(pol_save); free(cri_save); free(pm_save); free(pv_save)
        free(cm_save); free(cv_save); free(pgrad); free(cgrad); free(bobs)
        free(bacts); free(boldlp); free(badv); free(bret); free(ep_r)
        free(ep_v)
        raise MemoryError()

    cdef double h1v[MAX_HIDDEN]
    cdef double h2v[MAX_HIDDEN]
    cdef double logits[MAX_ACTIONS]
    cdef double e[MAX_ACTIONS]
    cdef double dlog[MAX_ACTIONS]
    cdef double vout[1]
    cdef double dvout[1]
    cdef double state[4]
    cdef double obs[MAX_OBS]
    cdef double nobs[MAX_OBS]
    cdef double x[MAX_OBS]

    cdef double lo = 1.0 - clip
    cdef double hi = 1.0 + clip
    cdef double opt0_save, opt1_save, opt2_save
    cdef double alpha, rew_sum, vabs, val, av, m, s, se, logs, uu, thr, acc
    cdef double lp, raw, r, phi_next, phi_cur, acc_a, nextv, delta
    cdef double mean_a, var_a, inv_a, dd, invn, ploss, closs, tot
    cdef double ratio, rc, s1, s2, obj, dobj_dlp, p, ind, g, lpi, diff, ent
    cdef int u, ep, t, i, a, epi, ep_len
    cdef Py_ssize_t nb, k, base
    cdef bint bad
    cdef int diverged_at = -1
    cdef long long t_global

    with nogil:
        for u in range(n_updates):
            t_global = start_update + u
            alpha = _blend_alpha(<double> t_global, blend[0], blend[1]) if has_blend else 0.0

            memcpy(pol_save, &policy[0], npol * sizeof(double))
            memcpy(cri_save, &critic[0], ncri * sizeof(double))
            memcpy(pm_save, &pm[0], npol * sizeof(double))
            memcpy(pv_save, &pv[0], npol * sizeof(double))
            memcpy(cm_save, &cm[0], ncri * sizeof(double))
            memcpy(cv_save, &cv[0], ncri * sizeof(double))
            opt0_save = opt[0]
            opt1_save = opt[1]
            opt2_save = opt[2]
            act_ctr_save = act_ctr
            ep_ctr_save = ep_ctr

            nb = 0
            rew_sum = 0.0
            vabs = 0.0

            for epi in range(n_ep):
                ep_key = _derive(ep_key_base, ep_ctr)
                ep_ctr = ep_ctr + 1
                _env_reset(task, &env_params[0], ep_key, state)
                _env_obs(task, &env_params[0], state, obs)
                ep_len = 0
                for t in range(horizon):
                    _fwd(&policy[0], d, h1, h2, na, obs, h1v, h2v, logits)
                    _fwd(&critic[0], d, h1, h2, 1, obs, h1v, h2v, vout)
                    val = vout[0]
                    av = val if val >= 0.0 else -val
                    if av > vabs:
                        vabs = av
                    _softmax_parts(logits, na, e, &m, &s, &se)
                    logs = _log_c(s)
                    uu = _uniform01(_rng_u64(act_key, act_ctr))
                    act_ctr = act_ctr + 1
                    thr = uu * s
                    acc = 0.0
                    a = na - 1
                    for i in range(na):
                        acc += e[i]
                        if thr < acc:
                            a = i
                            break
                    lp = (logits[a] - m) - logs
                    _env_step(task, &env_params[0], state, a)
                    _env_obs(task, &env_params[0], state, nobs)
                    raw = _reward_value(cops1, n1, ccon1, cops2, n2, ccon2,
                                        alpha, nobs)
                    r = _transform(scale_mode, &scale_state[0], raw)
                    if has_pot:
                        _fwd(potp, d, h1, h2, 1, nobs, h1v, h2v, vout)
                        phi_next = vout[0]
                        _fwd(potp, d, h1, h2, 1, obs, h1v, h2v, vout)
                        phi_cur = vout[0]
                        r = r + pot_gamma * phi_next - phi_cur
                    base = nb * d
                    for i in range(d):
                        bobs[base + i] = obs[i]
                    bacts[nb] = a
                    boldlp[nb] = lp
                    ep_r[t] = r
                    ep_v[t] = val
                    rew_sum += r
                    nb += 1
                    ep_len += 1
                    for i in range(d):
                        obs[i] = nobs[i]
                    if task == TASK_KEY_DOOR and state[3] == 1.0:
                        break
                # GAE over this episode; badv/bret slots line up with nb-ep_len
                acc_a = 0.0
                base = nb - ep_len
                for t in range(ep_len - 1, -1, -1):
                    nextv = ep_v[t + 1] if t + 1 < ep_len else 0.0
                    delta = ep_r[t] + gamma * nextv - ep_v[t]
                    acc_a = delta + gamma * lam * acc_a
                    badv[base + t] = acc_a
                for t in range(ep_len):
                    bret[base + t] = badv[base + t] + ep_v[t]

            if adv_norm:
                mean_a = 0.0
                for k in range(nb):
                    mean_a += badv[k]
                mean_a /= nb
                var_a = 0.0
                for k in range(nb):
                    dd = badv[k] - mean_a
                    var_a += dd * dd
                var_a /= nb
                inv_a = 1.0 / sqrt(var_a + 1e-8)
                for k in range(nb):
                    badv[k] = (badv[k] - mean_a) * inv_a

            bad = 0
            for ep in range(n_epochs):
                for k in range(npol):
                    pgrad[k] = 0.0
                for k in range(ncri):
                    cgrad[k] = 0.0
                ploss = 0.0
                closs = 0.0
                for k in range(nb):
                    base = k * d
                    for i in range(d):
                        x[i] = bobs[base + i]
                    _fwd(&policy[0], d, h1, h2, na, x, h1v, h2v, logits)
                    _softmax_parts(logits, na, e, &m, &s, &se)
                    logs = _log_c(s)
                    a = <int> bacts[k]
                    lp = (logits[a] - m) - logs
                    ent = logs - se / s
                    ratio = _exp_c(lp - boldlp[k])
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
                    _bwd(&policy[0], pgrad, d, h1, h2, na, x, h1v, h2v, dlog)
                    _fwd(&critic[0], d, h1, h2, 1, x, h1v, h2v, vout)
                    diff = vout[0] - bret[k]
                    closs += vf_coef * diff * diff
                    dvout[0] = vf_coef * 2.0 * diff
                    _bwd(&critic[0], cgrad, d, h1, h2, 1, x, h1v, h2v, dvout)
                invn = 1.0 / nb
                for k in range(npol):
                    pgrad[k] *= invn
                for k in range(ncri):
                    cgrad[k] *= invn
                ploss *= invn
                closs *= invn
                tot = ploss + closs
                if not _finite(tot):
                    bad = 1
                    break
                opt[0] = opt[0] + 1.0
                opt[1] = opt[1] * b1
                opt[2] = opt[2] * b2
                _adam(&policy[0], &pm[0], &pv[0], pgrad, npol, lr, b1, b2,
                      eps, opt[1], opt[2])
                _adam(&critic[0], &cm[0], &cv[0], cgrad, ncri, lr, b1, b2,
                      eps, opt[1], opt[2])
                if not (_all_finite(&policy[0], npol) and
                        _all_finite(&critic[0], ncri)):
                    bad = 1
                    break

            out_reward_mean[u] = rew_sum / nb
            out_vabs[u] = vabs
            if bad:
                memcpy(&policy[0], pol_save, npol * sizeof(double))
                memcpy(&critic[0], cri_save, ncri * sizeof(double))
                memcpy(&pm[0], pm_save, npol * sizeof(double))
                memcpy(&pv[0], pv_save, npol * sizeof(double))
                memcpy(&cm[0], cm_save, ncri * sizeof(double))
                memcpy(&cv[0], cv_save, ncri * sizeof(double))
                opt[0] = opt0_save
                opt[1] = opt1_save
                opt[2] = opt2_save
                act_ctr = act_ctr_save
                ep_ctr = ep_ctr_save
                diverged_at = u
                break

    rng[1] = act_ctr
    rng[2] = ep_ctr
    free(pol_save); free(cri_save); free(pm_save); free(pv_save)
    free(cm_save); free(cv_save); free(pgrad); free(cgrad); free(bobs)
    free(bacts); free(boldlp); free(badv); free(bret); free(ep_r)
    free(ep_v)
    return diverged_at

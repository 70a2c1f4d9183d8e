"""Two-layer softmax network with swish hidden units, and its surrogate statistics.

The model maps a feature vector z through a hidden layer S(omega1 @ z) with the
swish activation S(z) = z * sigmoid(z), then through output weights omega0 into
a softmax over classes. Training minimizes cross-entropy. Alongside the forward
pass this module computes the per-sample statistics (a_bar, b_bar, c_bar) that
make up the cross-entropy gradient and value, and maintains the running
accumulators (beta, A, B, C) from which the surrogate subproblems are solved in
closed form.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericError
from .solvers import PenalizedSolveResult, solve_penalized_ball
from .surrogate import QuadraticSurrogate


def _sigmoid(z: np.ndarray) -> np.ndarray:
    # two-branch form so exp never sees a large positive argument
    z = np.asarray(z, dtype=float)
    pos = z >= 0.0
    safe_pos = np.where(pos, z, 0.0)
    safe_neg = np.where(pos, 0.0, z)
    grow = np.exp(safe_neg)
    return np.where(pos, 1.0 / (1.0 + np.exp(-safe_pos)), grow / (1.0 + grow))


def swish(z):
    """Swish activation S(z) = z * sigmoid(z); accepts scalars or arrays."""
    out = np.asarray(z, dtype=float) * _sigmoid(z)
    return float(out) if out.ndim == 0 else out


def swish_prime(z):
    """Derivative of swish: sigmoid(z) * (1 + z * (1 - sigmoid(z)))."""
    sig = _sigmoid(z)
    out = sig * (1.0 + np.asarray(z, dtype=float) * (1.0 - sig))
    return float(out) if out.ndim == 0 else out


@dataclass
class NnParams:
    """Network weights: omega0 (L x J output layer), omega1 (J x P hidden layer).

    The flat vector layout is omega0 row-major followed by omega1 row-major,
    for a total dimension of J * (P + L).
    """

    omega0: np.ndarray
    omega1: np.ndarray

    def __post_init__(self):
        self.omega0 = np.asarray(self.omega0, dtype=float)
        self.omega1 = np.asarray(self.omega1, dtype=float)
        if self.omega0.ndim != 2 or self.omega1.ndim != 2:
            raise ValueError("omega0 and omega1 must be 2-D matrices")
        if self.omega0.shape[1] != self.omega1.shape[0]:
            raise ValueError(
                f"hidden width mismatch: omega0 is {self.omega0.shape}, omega1 is {self.omega1.shape}"
            )
        if not (np.all(np.isfinite(self.omega0)) and np.all(np.isfinite(self.omega1))):
            raise ValueError("parameters must be finite")

    @property
    def l_classes(self) -> int:
        return self.omega0.shape[0]

    @property
    def j_hidden(self) -> int:
        return self.omega1.shape[0]

    @property
    def p_features(self) -> int:
        return self.omega1.shape[1]

    @property
    def dim(self) -> int:
        return self.j_hidden * (self.p_features + self.l_classes)

    def to_flat(self) -> np.ndarray:
        return np.concatenate([self.omega0.ravel(), self.omega1.ravel()])

    @classmethod
    def from_flat(cls, flat: np.ndarray, l_classes: int, j_hidden: int, p_features: int) -> "NnParams":
        flat = np.asarray(flat, dtype=float)
        split = l_classes * j_hidden
        expect = j_hidden * (p_features + l_classes)
        if flat.shape != (expect,):
            raise ValueError(f"flat vector must have shape ({expect},), got {flat.shape}")
        return cls(
            flat[:split].reshape(l_classes, j_hidden).copy(),
            flat[split:].reshape(j_hidden, p_features).copy(),
        )

    def copy(self) -> "NnParams":
        return NnParams(self.omega0.copy(), self.omega1.copy())


def init_params(rng, l_classes: int, j_hidden: int, p_features: int, scale: float = 0.05) -> NnParams:
    """Draw initial weights entrywise uniform on (-scale, scale)."""
    if min(l_classes, j_hidden, p_features) < 1:
        raise ValueError("all layer sizes must be positive")
    if scale <= 0.0:
        raise ValueError(f"scale must be positive, got {scale}")
    dim = j_hidden * (p_features + l_classes)
    flat = rng.gen.uniform(-scale, scale, size=dim)
    return NnParams.from_flat(flat, l_classes, j_hidden, p_features)


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    if not np.all(np.isfinite(logits)):
        raise NumericError("non-finite activations in forward pass")
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    return shifted - log_norm


def _forward_batch(params: NnParams, z_batch: np.ndarray):
    """Hidden activations, pre-activations, softmax outputs and their logs for a batch."""
    z_batch = np.asarray(z_batch, dtype=float)
    if z_batch.ndim != 2 or z_batch.shape[1] != params.p_features:
        raise ValueError(
            f"expected batch of shape (B, {params.p_features}), got {z_batch.shape}"
        )
    pre = z_batch @ params.omega1.T
    hidden = swish(pre)
    log_q = _log_softmax(hidden @ params.omega0.T)
    return pre, hidden, np.exp(log_q), log_q


def forward(params: NnParams, z_features: np.ndarray) -> np.ndarray:
    """Class probabilities for a single feature vector."""
    z = np.asarray(z_features, dtype=float)
    if z.ndim != 1:
        raise ValueError("z_features must be a 1-D vector")
    _, _, q, _ = _forward_batch(params, z[None, :])
    return q[0]


def _check_labels(z_batch: np.ndarray, y_batch: np.ndarray, l_classes: int) -> np.ndarray:
    y_batch = np.asarray(y_batch, dtype=float)
    if y_batch.shape != (np.asarray(z_batch).shape[0], l_classes):
        raise ValueError(
            f"labels must have shape ({np.asarray(z_batch).shape[0]}, {l_classes}), got {y_batch.shape}"
        )
    return y_batch


def loss(params: NnParams, z_batch: np.ndarray, y_batch: np.ndarray) -> float:
    """Mean cross-entropy over the batch; labels are one-hot rows."""
    y_batch = _check_labels(z_batch, y_batch, params.l_classes)
    _, _, _, log_q = _forward_batch(params, z_batch)
    return float(-(y_batch * log_q).sum() / y_batch.shape[0])


def regularized_loss(params: NnParams, z_batch: np.ndarray, y_batch: np.ndarray, lam: float) -> float:
    """Cross-entropy plus lam * squared l2 norm of all weights."""
    flat = params.to_flat()
    return loss(params, z_batch, y_batch) + lam * float(flat @ flat)


def accuracy(params: NnParams, z_batch: np.ndarray, y_batch: np.ndarray) -> float:
    """Fraction of samples whose argmax prediction matches the label."""
    y_batch = _check_labels(z_batch, y_batch, params.l_classes)
    _, _, q, _ = _forward_batch(params, z_batch)
    return float(np.mean(q.argmax(axis=1) == y_batch.argmax(axis=1)))


@dataclass
class SampleStats:
    """Cross-entropy statistics: a_bar (L x J), b_bar (J x P), c_bar scalar.

    (a_bar, b_bar) is the gradient of the per-sample cross-entropy arranged
    into the (omega0, omega1) blocks, and c_bar = sum_l y_l log Q_l <= 0 so
    that -c_bar is the per-sample loss. Sums over a batch use the same shape.
    """

    a_bar: np.ndarray
    b_bar: np.ndarray
    c_bar: float

    def __post_init__(self):
        self.a_bar = np.asarray(self.a_bar, dtype=float)
        self.b_bar = np.asarray(self.b_bar, dtype=float)
        self.c_bar = float(self.c_bar)
        if self.a_bar.ndim != 2 or self.b_bar.ndim != 2:
            raise ValueError("a_bar and b_bar must be 2-D matrices")
        if self.a_bar.shape[1] != self.b_bar.shape[0]:
            raise ValueError("hidden width mismatch between a_bar and b_bar")
        if not (np.all(np.isfinite(self.a_bar)) and np.all(np.isfinite(self.b_bar)) and np.isfinite(self.c_bar)):
            raise NumericError("non-finite surrogate statistics")
        if self.c_bar > 0.0:
            raise ValueError(f"c_bar must be <= 0, got {self.c_bar}")

    def scaled(self, weight: float) -> "SampleStats":
        return SampleStats(weight * self.a_bar, weight * self.b_bar, weight * self.c_bar)

    def stacked_grad(self) -> np.ndarray:
        return np.concatenate([self.a_bar.ravel(), self.b_bar.ravel()])


def stats_from_pre(omega0: np.ndarray, pre: np.ndarray, y_batch: np.ndarray):
    """Batch statistics computable from hidden pre-activations alone.

    Serves split-feature evaluation, where the rows of `pre` arrive as sums
    of per-client partial products and no single party holds the full feature
    matrix. Returns the summed a-statistic (L x J), the per-sample gate
    (B x J) whose transposed product with a feature block yields that block's
    b-statistic, and the summed log-likelihood c <= 0.
    """
    omega0 = np.asarray(omega0, dtype=float)
    pre = np.asarray(pre, dtype=float)
    y_batch = np.asarray(y_batch, dtype=float)
    if pre.ndim != 2 or y_batch.shape != (pre.shape[0], omega0.shape[0]):
        raise ValueError(
            f"shape mismatch: pre {pre.shape}, labels {y_batch.shape}, output weights {omega0.shape}"
        )
    if omega0.shape[1] != pre.shape[1]:
        raise ValueError("hidden width mismatch between pre-activations and output weights")
    hidden = swish(pre)
    log_q = _log_softmax(hidden @ omega0.T)
    resid = np.exp(log_q) - y_batch
    a_sum = resid.T @ hidden
    gate = (resid @ omega0) * swish_prime(pre)
    c_sum = float((y_batch * log_q).sum())
    return a_sum, gate, c_sum


def batch_stats(params: NnParams, z_batch: np.ndarray, y_batch: np.ndarray) -> SampleStats:
    """Sum of per-sample statistics over the batch, computed vectorized.

    a_bar[l, j] sums (Q_l - y_l) * S(pre_j); b_bar[j, p] sums
    sum_l (Q_l - y_l) * S'(pre_j) * omega0[l, j] * z_p; c_bar sums
    y . log Q. Divide by the batch size (or apply federation weights)
    to obtain averages.
    """
    y_batch = _check_labels(z_batch, y_batch, params.l_classes)
    z_batch = np.asarray(z_batch, dtype=float)
    if z_batch.ndim != 2 or z_batch.shape[1] != params.p_features:
        raise ValueError(
            f"expected batch of shape (B, {params.p_features}), got {z_batch.shape}"
        )
    pre = z_batch @ params.omega1.T
    a_bar, gate, c_bar = stats_from_pre(params.omega0, pre, y_batch)
    return SampleStats(a_bar, gate.T @ z_batch, c_bar)


def sample_stats(params: NnParams, z_features: np.ndarray, y_onehot: np.ndarray) -> SampleStats:
    """Statistics for a single sample."""
    z = np.asarray(z_features, dtype=float)
    y = np.asarray(y_onehot, dtype=float)
    if z.ndim != 1 or y.ndim != 1:
        raise ValueError("z_features and y_onehot must be 1-D vectors")
    return batch_stats(params, z[None, :], y[None, :])


@dataclass
class AppSurrogateState:
    """Running surrogate accumulators: beta (flat d), A (L x J), B (J x P), C."""

    beta: np.ndarray
    A: np.ndarray
    B: np.ndarray
    C: float
    round: int

    @classmethod
    def zeros(cls, l_classes: int, j_hidden: int, p_features: int) -> "AppSurrogateState":
        return cls(
            beta=np.zeros(j_hidden * (p_features + l_classes)),
            A=np.zeros((l_classes, j_hidden)),
            B=np.zeros((j_hidden, p_features)),
            C=0.0,
            round=0,
        )

    def stacked_linear(self) -> np.ndarray:
        return np.concatenate([self.A.ravel(), self.B.ravel()])


def update_app_surrogate(
    state: AppSurrogateState,
    rho_t: float,
    tau: float,
    params_t: NnParams,
    avg_stats: SampleStats,
) -> AppSurrogateState:
    """One recursion step of the accumulators given batch-averaged statistics.

    beta tracks the running expansion point; (A, B) track the linear
    coefficients of the quadratic approximation of the cross-entropy in the
    two weight blocks; C tracks its constant so that the approximation
    reproduces the batch loss at the expansion point when rho_t = 1.
    """
    if not 0.0 < rho_t <= 1.0:
        raise ValueError(f"rho_t must be in (0, 1], got {rho_t}")
    if tau <= 0.0:
        raise ValueError(f"tau must be positive, got {tau}")
    if avg_stats.a_bar.shape != state.A.shape or avg_stats.b_bar.shape != state.B.shape:
        raise ValueError("statistics shape does not match accumulator shape")
    if params_t.omega0.shape != state.A.shape or params_t.omega1.shape != state.B.shape:
        raise ValueError("parameter shape does not match accumulator shape")
    omega_flat = params_t.to_flat()
    keep = 1.0 - rho_t
    batch_value = -avg_stats.c_bar + tau * float(omega_flat @ omega_flat)
    cross = float(np.sum(avg_stats.a_bar * params_t.omega0) + np.sum(avg_stats.b_bar * params_t.omega1))
    return AppSurrogateState(
        beta=keep * state.beta + rho_t * omega_flat,
        A=keep * state.A + rho_t * (avg_stats.a_bar - 2.0 * tau * params_t.omega0),
        B=keep * state.B + rho_t * (avg_stats.b_bar - 2.0 * tau * params_t.omega1),
        C=keep * state.C + rho_t * (batch_value - cross),
        round=state.round + 1,
    )


def constraint_surrogate(state: AppSurrogateState, tau: float) -> QuadraticSurrogate:
    """The accumulated loss approximation as a quadratic in the flat weights."""
    return QuadraticSurrogate(constant=state.C, linear=state.stacked_linear(), tau=tau)


def solve_unconstrained_app(state: AppSurrogateState, lam: float, tau: float) -> NnParams:
    """Minimizer of the accumulated approximation of loss + lam * l2^2."""
    if lam < 0.0:
        raise ValueError(f"lam must be nonnegative, got {lam}")
    if tau <= 0.0:
        raise ValueError(f"tau must be positive, got {tau}")
    l_classes, j_hidden = state.A.shape
    p_features = state.B.shape[1]
    split = l_classes * j_hidden
    beta0 = state.beta[:split].reshape(l_classes, j_hidden)
    beta1 = state.beta[split:].reshape(j_hidden, p_features)
    omega0 = -(state.A + 2.0 * lam * beta0) / (2.0 * tau)
    omega1 = -(state.B + 2.0 * lam * beta1) / (2.0 * tau)
    return NnParams(omega0, omega1)


def solve_constrained_app(
    state: AppSurrogateState,
    ubound: float,
    tau: float,
    penalty: float,
) -> tuple[NnParams, PenalizedSolveResult]:
    """Minimum-norm weights subject to the accumulated loss approximation <= ubound.

    Solved in closed form through the penalized-ball subproblem on the
    stacked linear coefficients; returns the reshaped weights along with the
    full solve result (slack, dual, activity).
    """
    l_classes, j_hidden = state.A.shape
    p_features = state.B.shape[1]
    result = solve_penalized_ball(state.stacked_linear(), tau, state.C, ubound, penalty)
    params = NnParams.from_flat(result.omega_bar, l_classes, j_hidden, p_features)
    return params, result

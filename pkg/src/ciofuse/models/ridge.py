import numpy as np


def fit_ridge(X, y, lam, sample_weight=None):
    """Closed-form weighted ridge with an unpenalized intercept.

    Minimizes ``sum_i w_i (y_i - x_i.w - b)^2 + lam * ||w||^2`` where the
    weights are rescaled to average one, so ``sample_weight=None`` is the
    plain sum-of-squares objective. Columns are centered and scaled for the
    solve; the penalty is adjusted so the returned ``(w, b)`` is the exact
    minimizer on the raw scale. Constant columns get a zero coefficient.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, p = X.shape
    w = np.ones(n) if sample_weight is None else np.asarray(sample_weight, dtype=float)
    w = w * (n / w.sum())

    mx = w @ X / n
    my = w @ y / n
    Xc = X - mx
    sd = np.sqrt(w @ Xc**2 / n)
    live = sd > 1e-12 * (1.0 + np.abs(mx))
    coef = np.zeros(p)
    if live.any():
        Z = Xc[:, live] / sd[live]
        sw = np.sqrt(w)
        Zw = Z * sw[:, None]
        A = Zw.T @ Zw + np.diag(lam / sd[live] ** 2)
        rhs = Zw.T @ ((y - my) * sw)
        try:
            g = np.linalg.solve(A, rhs)
        except np.linalg.LinAlgError:
            g = np.linalg.lstsq(A, rhs, rcond=None)[0]
        coef[live] = g / sd[live]
    intercept = my - mx @ coef
    return coef, float(intercept)

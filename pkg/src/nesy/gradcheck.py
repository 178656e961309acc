"""Central finite-difference checks for every analytic gradient.

Three suites, each over randomized instances:

* ``provenance``: ``wmc_grad`` against differences of ``wmc``;
* ``neural``: ``Network.backward`` (inputs and parameters);
* ``constraints``: ``soft_loss_grad`` against differences of ``soft_eval``.

The analytic gradient function is injectable so a deliberately broken
implementation can be shown to fail.
"""

from dataclasses import dataclass

import numpy as np

from nesy import constraints as C
from nesy import neural
from nesy.provenance import FactTable, wmc, wmc_grad

EPS = 1e-5
TOLERANCE = 1e-4
DEFAULT_INSTANCES = 1000
_FLOOR = 1e-5  # central-difference roundoff at EPS reaches ~1e-10; smaller partials count as zero


@dataclass
class SuiteResult:
    name: str
    instances: int
    checks: int
    max_rel_error: float
    skipped: int = 0

    @property
    def passed(self):
        return self.max_rel_error < TOLERANCE

    def line(self):
        status = "PASS" if self.passed else "FAIL"
        return (f"{status} {self.name}: {self.instances} instances, {self.checks} partials, "
                f"max rel err {self.max_rel_error:.3e}")


def rel_error(analytic, numeric):
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), _FLOOR)


# -- provenance ---------------------------------------------------------------

def random_wmc_instance(rng):
    n_groups = int(rng.integers(1, 5))
    probs, exclusive = [], []
    for g in range(n_groups):
        if rng.random() < 0.5:
            size = int(rng.integers(2, 5))
            probs.append(list(rng.dirichlet(np.ones(size))))
            exclusive.append(g)
        else:
            probs.append(list(rng.uniform(0.05, 0.95, size=int(rng.integers(1, 4)))))
    weights = FactTable(probs, exclusive)
    fids = weights.fact_ids()
    proofs = []
    for _ in range(int(rng.integers(1, 6))):
        size = int(rng.integers(1, min(4, len(fids)) + 1))
        picked = [fids[i] for i in rng.choice(len(fids), size=size, replace=False)]
        by_group = {}
        for f in picked:  # one member per disjunction keeps the proof consistent
            if f.group in weights.exclusive:
                by_group.setdefault(f.group, f)
            else:
                by_group[(f.group, f.member)] = f
        proofs.append(tuple(sorted(by_group.values())))
    return proofs, weights


def check_provenance(instances=DEFAULT_INSTANCES, seed=0, grad_fn=wmc_grad) -> SuiteResult:
    rng = np.random.default_rng(seed)
    worst, checks = 0.0, 0
    for _ in range(instances):
        proofs, weights = random_wmc_instance(rng)
        analytic = grad_fn(proofs, weights).grad
        for fid in weights.fact_ids():
            p = weights.prob(fid)
            numeric = (wmc(proofs, weights.with_prob(fid, p + EPS))
                       - wmc(proofs, weights.with_prob(fid, p - EPS))) / (2 * EPS)
            worst = max(worst, rel_error(analytic.get(fid, 0.0), numeric))
            checks += 1
    return SuiteResult("provenance", instances, checks, worst)


# -- neural ----------------------------------------------------------------------

def check_neural(instances=DEFAULT_INSTANCES, seed=0, backward=None) -> SuiteResult:
    """``backward(net, upstream)`` defaults to ``net.backward``."""
    rng = np.random.default_rng(seed)
    worst, checks = 0.0, 0
    for _ in range(instances):
        sizes = [int(rng.integers(2, 6)) for _ in range(int(rng.integers(2, 4)))]
        net = neural.mlp("check", sizes, seed=int(rng.integers(1 << 30)), softmax=bool(rng.random() < 0.7))
        for layer in net.layers:
            if isinstance(layer, neural.Linear):
                layer.bias = rng.normal(0.0, 0.5, size=layer.bias.shape)
        x = rng.normal(size=(int(rng.integers(1, 4)), sizes[0]))
        upstream = rng.normal(size=(x.shape[0], sizes[-1]))

        def objective():
            return float(np.sum(net.predict(x) * upstream))

        neural.zero_grads(net)
        net.forward(x)
        grad_x = (backward or (lambda n, g: n.backward(g)))(net, upstream)
        # input partials
        for _ in range(3):
            r, c = int(rng.integers(x.shape[0])), int(rng.integers(x.shape[1]))
            old = x[r, c]
            x[r, c] = old + EPS
            fp = objective()
            x[r, c] = old - EPS
            fm = objective()
            x[r, c] = old
            numeric = (fp - fm) / (2 * EPS)
            worst = max(worst, rel_error(grad_x[r, c], numeric))
            checks += 1
        for p, g in zip(net.params(), net.grads()):
            idx = tuple(int(rng.integers(n)) for n in p.shape)
            old = p[idx]
            p[idx] = old + EPS
            fp = objective()
            p[idx] = old - EPS
            fm = objective()
            p[idx] = old
            worst = max(worst, rel_error(g[idx], (fp - fm) / (2 * EPS)))
            checks += 1
    return SuiteResult("neural", instances, checks, worst)


# -- constraints ------------------------------------------------------------------

def random_expr(rng, vars_, depth=0):
    kind = rng.integers(0, 7) if depth < 3 else 0
    if kind == 0:
        var = vars_[int(rng.integers(len(vars_)))]
        return C.is_(var, int(rng.integers(var.size)))
    if kind in (1, 2, 5):
        kids = [random_expr(rng, vars_, depth + 1) for _ in range(int(rng.integers(1, 4)))]
        return {1: C.andL, 2: C.orL, 5: lambda *k: C.existsL(k)}[int(kind)](*kids)
    if kind == 3:
        return C.notL(random_expr(rng, vars_, depth + 1))
    if kind == 4:
        return C.ifL(random_expr(rng, vars_, depth + 1), random_expr(rng, vars_, depth + 1))
    var = vars_[int(rng.integers(len(vars_)))]
    values = rng.choice(var.size, size=int(rng.integers(1, var.size + 1)), replace=False)
    return C.exactL(*[C.is_(var, int(v)) for v in values])


def _near_kink(expr, assignments, margin=1e-3):
    """True if any ifL or partial exactL sits within ``margin`` of a kink."""
    stack = [expr]
    while stack:
        node = stack.pop()
        if isinstance(node, C.IfL):
            a = C.soft_eval(node.antecedent, assignments)
            b = C.soft_eval(node.consequent, assignments)
            if abs(a - b) < margin:
                return True
            stack += [node.antecedent, node.consequent]
        elif isinstance(node, C.ExactL):
            if not C._is_structural_exact(node):
                s = sum(C.soft_eval(c, assignments) for c in node.children)
                if min(abs(s - 1.0), abs(abs(s - 1.0) - 1.0)) < margin:
                    return True
        elif isinstance(node, C.NotL):
            stack.append(node.child)
        elif not isinstance(node, C.Lit):
            stack += list(node.children)
    return False


def check_constraints(instances=DEFAULT_INSTANCES, seed=0, grad_fn=C.soft_loss_grad) -> SuiteResult:
    rng = np.random.default_rng(seed)
    worst, checks, skipped, done = 0.0, 0, 0, 0
    while done < instances:
        vars_ = [C.ConceptVar(f"v{i}", int(rng.integers(2, 5))) for i in range(int(rng.integers(1, 4)))]
        expr = random_expr(rng, vars_)
        assignments = {v.name: rng.dirichlet(np.ones(v.size)) for v in vars_}
        if _near_kink(expr, assignments):
            skipped += 1
            continue
        _, grads = grad_fn(expr, assignments)
        for var in C.variables(expr):
            for j in range(var.size):
                vec = assignments[var.name]
                old = vec[j]
                vec[j] = old + EPS
                fp = 1.0 - C.soft_eval(expr, assignments)
                vec[j] = old - EPS
                fm = 1.0 - C.soft_eval(expr, assignments)
                vec[j] = old
                worst = max(worst, rel_error(grads[var.name][j], (fp - fm) / (2 * EPS)))
                checks += 1
        done += 1
    return SuiteResult("constraints", instances, checks, worst, skipped)


def run_all(instances=DEFAULT_INSTANCES, seed=0):
    return [check_provenance(instances, seed), check_neural(instances, seed), check_constraints(instances, seed)]

from nesy import constraints as C
from nesy import gradcheck
from nesy.provenance import GradProb, wmc_grad


def _flip_provenance(proofs, weights):
    gp = wmc_grad(proofs, weights)
    return GradProb(gp.value, {k: -v for k, v in gp.grad.items()})


def test_suites_pass():
    for result in gradcheck.run_all(instances=200, seed=1):
        assert result.passed, result.line()
        assert result.line().startswith("PASS")


def test_sign_flip_mutants_fail():
    assert not gradcheck.check_provenance(50, 0, grad_fn=_flip_provenance).passed

    def flip_constraints(expr, assignments):
        loss, grads = C.soft_loss_grad(expr, assignments)
        return loss, {k: -v for k, v in grads.items()}
    assert not gradcheck.check_constraints(50, 0, grad_fn=flip_constraints).passed

    def flip_backward(net, grad):
        return -net.backward(grad)
    result = gradcheck.check_neural(20, 0, backward=flip_backward)
    assert not result.passed and result.line().startswith("FAIL")

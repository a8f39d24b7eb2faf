import numpy as np
import pytest

from co3.tasks import LogisticTask, QuadraticTask, TaskKind, TaskSpec, TeacherStudentTask, build_task


def numeric_grad(f, w, h=1e-6):
    g = np.zeros_like(w)
    for i in range(w.size):
        e = np.zeros_like(w)
        e[i] = h
        g[i] = (f(w + e) - f(w - e)) / (2 * h)
    return g


class TestQuadratic:
    def test_closed_form(self):
        task = QuadraticTask(TaskSpec(dimension=5, noise_scale=0.0, mu=1.0, smoothness=4.0))
        assert task.mu == 1.0 and task.smoothness == 4.0
        assert np.allclose(np.linalg.eigvalsh(task.hessian)[[0, -1]], [1.0, 4.0])
        assert task.loss(task.w_star) == 0.0
        assert np.allclose(task.full_gradient(task.w_star), 0.0)

    def test_noise_free_gradient_is_exact(self, rng):
        task = QuadraticTask(TaskSpec(dimension=4, noise_scale=0.0))
        w = rng.standard_normal(4)
        assert np.array_equal(task.local_gradient(0, w, rng), task.hessian_diag * w - task.b)
        assert np.allclose(task.local_gradient(0, task.w_star, rng), 0.0)

    def test_unbiased(self):
        task = QuadraticTask(TaskSpec(dimension=3, noise_scale=0.7, noise_shape=1.2))
        w = task.initial_model()
        g = np.array([task.local_gradient(0, w, np.random.default_rng(s)) for s in range(10_000)])
        se = g.std(axis=0, ddof=1) / np.sqrt(len(g))
        assert np.all(np.abs(g.mean(axis=0) - task.full_gradient(w)) <= 3 * se)

    def test_identity_hessian(self):
        task = QuadraticTask(TaskSpec(dimension=3), hessian_diag=[1.0, 1.0, 1.0])
        assert task.mu == task.smoothness == 1.0

    def test_initial_distance(self):
        task = QuadraticTask(TaskSpec(dimension=10, init_radius=2.0))
        assert np.linalg.norm(task.initial_model() - task.w_star) == pytest.approx(2.0)

    def test_gradient_matches_loss(self, rng):
        task = QuadraticTask(TaskSpec(dimension=6))
        w = rng.standard_normal(6)
        assert np.allclose(numeric_grad(task.loss, w), task.full_gradient(w), atol=1e-6)


class TestLogistic:
    @pytest.fixture(scope="class")
    @classmethod
    def task(cls):
        return LogisticTask(TaskSpec(kind="logistic", dimension=8, users=3, samples_per_user=100))

    def test_optimum(self, task):
        assert np.linalg.norm(task.full_gradient(task.w_star)) < 1e-10
        assert task.gap(task.w_star) == 0.0
        assert task.gap(task.initial_model()) > 0

    def test_gradient_matches_loss(self, task, rng):
        w = rng.standard_normal(8) * 0.3
        assert np.allclose(numeric_grad(task.loss, w), task.full_gradient(w), atol=1e-6)

    def test_minibatch_unbiased_for_local_objective(self, task):
        w = np.full(8, 0.1)
        u = 1
        local = task._objective_grad(task.X[u], task.y[u], w)
        g = np.array([task.local_gradient(u, w, np.random.default_rng(s)) for s in range(10_000)])
        se = g.std(axis=0, ddof=1) / np.sqrt(len(g))
        assert np.all(np.abs(g.mean(axis=0) - local) <= 3 * se + 1e-12)

    def test_constants(self, task):
        assert task.mu == task.spec.l2
        assert task.smoothness > task.mu


class TestTeacherStudent:
    def test_layers_and_gradient(self, rng):
        task = TeacherStudentTask(TaskSpec(kind=TaskKind.TEACHER_STUDENT, hidden=4, input_dim=3))
        assert task.layers == [slice(0, 12), slice(12, 16)]
        assert task.dim == 16
        w = task.initial_model()
        assert np.allclose(numeric_grad(task.loss, w), task.full_gradient(w), atol=1e-6)

    def test_teacher_is_optimal(self):
        task = TeacherStudentTask(TaskSpec(kind="teacher_student", hidden=4, input_dim=3))
        w = np.concatenate([task.teacher_W.ravel(), task.teacher_v])
        assert task.loss(w) == 0.0
        assert np.allclose(task.local_gradient(0, w, np.random.default_rng(0)), 0.0)


def test_build_and_validate():
    assert isinstance(build_task(TaskSpec(kind="quadratic", dimension=2)), QuadraticTask)
    with pytest.raises(ValueError):
        TaskSpec(kind="cnn")
    with pytest.raises(ValueError):
        TaskSpec(dimension=0)

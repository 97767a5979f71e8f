//! Minibatch losses with their parameter gradients.
//!
//! Every loss draws its own `(t, ε)` per sample from the supplied stream, so
//! cloning the stream before a call reproduces the exact same draws (the
//! finite-difference tests rely on this).

use crate::ensemble::VelocityField;
use crate::error::{check_len, Error, Result};
use crate::flow::Schedule;
use crate::numerics::{LossSpec, MlpModel, Rng};

/// One point on a random interpolation path.
#[derive(Debug, Clone, PartialEq)]
pub struct PathDraw {
    pub t: f64,
    pub x_t: Vec<f64>,
    /// Conditional flow `α̇ x_0 + σ̇ ε` at `(x_t, t)`.
    pub target: Vec<f64>,
}

/// `t ~ U[t_min, 1]`, `ε ~ N(0, I)`, `x_t = α x_0 + σ ε`.
pub fn draw_path(x0: &[f64], schedule: &Schedule, rng: &mut Rng) -> PathDraw {
    let t = rng.uniform_in(schedule.t_min, 1.0);
    let eps = rng.normal_vec(x0.len());
    PathDraw {
        t,
        x_t: schedule.interpolate(x0, &eps, t),
        target: schedule.path_velocity(x0, &eps, t),
    }
}

fn check_batch(batch: &[&[f64]], dim: usize) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::Argument("empty training batch".into()));
    }
    for row in batch {
        check_len(row.len(), dim, "training batch row")?;
    }
    Ok(())
}

/// Conditional flow matching: mean over the batch of `‖v_θ(x_t, t) − u_t(x_t | x_0)‖²`.
pub fn cfm_loss(model: &MlpModel, batch: &[&[f64]], rng: &mut Rng, schedule: &Schedule) -> Result<(f64, Vec<f64>)> {
    check_batch(batch, model.data_dim())?;
    let scale = 1.0 / batch.len() as f64;
    let mut grad = vec![0.0; model.num_params()];
    let mut total = 0.0;
    for x0 in batch {
        let draw = draw_path(x0, schedule, rng);
        let spec = LossSpec::SquaredError(draw.target);
        total += model.accumulate_grad(&draw.x_t, draw.t, &spec, scale, &mut grad)?;
    }
    Ok((total * scale, grad))
}

/// Router cross-entropy: predict the cluster of `x_0` from `(x_t, t)`.
pub fn router_loss(
    model: &MlpModel,
    batch: &[&[f64]],
    labels: &[usize],
    rng: &mut Rng,
    schedule: &Schedule,
) -> Result<(f64, Vec<f64>)> {
    check_batch(batch, model.data_dim())?;
    check_len(labels.len(), batch.len(), "router labels")?;
    let scale = 1.0 / batch.len() as f64;
    let mut grad = vec![0.0; model.num_params()];
    let mut total = 0.0;
    for (x0, &k) in batch.iter().zip(labels) {
        let draw = draw_path(x0, schedule, rng);
        let spec = LossSpec::CrossEntropy(k);
        total += model.accumulate_grad(&draw.x_t, draw.t, &spec, scale, &mut grad)?;
    }
    Ok((total * scale, grad))
}

/// Distillation: regress the student onto the teacher selected by each
/// sample's cluster label.
pub fn distill_loss<T: VelocityField>(
    student: &MlpModel,
    teachers: &[T],
    batch: &[&[f64]],
    labels: &[usize],
    rng: &mut Rng,
    schedule: &Schedule,
) -> Result<(f64, Vec<f64>)> {
    check_batch(batch, student.data_dim())?;
    check_len(labels.len(), batch.len(), "distillation labels")?;
    let scale = 1.0 / batch.len() as f64;
    let mut grad = vec![0.0; student.num_params()];
    let mut total = 0.0;
    for (x0, &k) in batch.iter().zip(labels) {
        let teacher = teachers.get(k).ok_or_else(|| {
            Error::Argument(format!("no teacher for cluster {k} ({} loaded)", teachers.len()))
        })?;
        let draw = draw_path(x0, schedule, rng);
        let target = teacher.velocity(&draw.x_t, draw.t)?;
        let spec = LossSpec::SquaredError(target);
        total += student.accumulate_grad(&draw.x_t, draw.t, &spec, scale, &mut grad)?;
    }
    Ok((total * scale, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Activation;

    fn small_model(rng: &mut Rng, out: usize) -> MlpModel {
        MlpModel::init(2, &[5, 4], out, Activation::Tanh, 4, false, rng).unwrap()
    }

    fn rows(data: &[[f64; 2]]) -> Vec<&[f64]> {
        data.iter().map(|r| r.as_slice()).collect()
    }

    /// Central differences of `f` against `grad`, relative error with a small floor.
    fn check_fd(params: &[f64], grad: &[f64], mut f: impl FnMut(&[f64]) -> f64) {
        let h = 1e-5;
        let mut p = params.to_vec();
        for i in 0..p.len() {
            let orig = p[i];
            p[i] = orig + h;
            let up = f(&p);
            p[i] = orig - h;
            let down = f(&p);
            p[i] = orig;
            let fd = (up - down) / (2.0 * h);
            let rel = (fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1e-6);
            assert!(rel < 1e-4, "param {i}: analytic {} vs fd {fd}", grad[i]);
        }
    }

    #[test]
    fn zero_model_cfm_loss_is_noise_energy() {
        let model = MlpModel::zeros(1, &[3], 1, Activation::Tanh, 4).unwrap();
        let data = vec![[0.0]; 20_000];
        let batch: Vec<&[f64]> = data.iter().map(|r| r.as_slice()).collect();
        let (loss, _) = cfm_loss(&model, &batch, &mut Rng::new(4), &Schedule::linear()).unwrap();
        assert!((loss - 1.0).abs() < 0.03, "loss {loss}");
    }

    #[test]
    fn cfm_gradient_matches_finite_differences() {
        let mut init = Rng::new(11);
        let model = small_model(&mut init, 2);
        let data = [[0.5, -1.0], [2.0, 0.3], [-1.5, 1.5]];
        let batch = rows(&data);
        let schedule = Schedule::linear();
        let rng = Rng::new(12);
        let (_, grad) = cfm_loss(&model, &batch, &mut rng.clone(), &schedule).unwrap();
        let mut probe = model.clone();
        check_fd(model.params(), &grad, |p| {
            probe.set_params(p).unwrap();
            cfm_loss(&probe, &batch, &mut rng.clone(), &schedule).unwrap().0
        });
    }

    #[test]
    fn router_gradient_matches_finite_differences() {
        let mut init = Rng::new(21);
        let model = small_model(&mut init, 3);
        let data = [[0.5, -1.0], [2.0, 0.3], [-1.5, 1.5], [0.0, 0.0]];
        let batch = rows(&data);
        let labels = [0, 2, 1, 2];
        let schedule = Schedule::cosine();
        let rng = Rng::new(22);
        let (_, grad) = router_loss(&model, &batch, &labels, &mut rng.clone(), &schedule).unwrap();
        let mut probe = model.clone();
        check_fd(model.params(), &grad, |p| {
            probe.set_params(p).unwrap();
            router_loss(&probe, &batch, &labels, &mut rng.clone(), &schedule).unwrap().0
        });
    }

    #[test]
    fn distill_gradient_matches_finite_differences() {
        let mut init = Rng::new(31);
        let student = small_model(&mut init, 2);
        let teachers = vec![small_model(&mut init, 2), small_model(&mut init, 2)];
        let data = [[0.5, -1.0], [2.0, 0.3], [-1.5, 1.5]];
        let batch = rows(&data);
        let labels = [1, 0, 1];
        let schedule = Schedule::linear();
        let rng = Rng::new(32);
        let (_, grad) = distill_loss(&student, &teachers, &batch, &labels, &mut rng.clone(), &schedule).unwrap();
        let mut probe = student.clone();
        check_fd(student.params(), &grad, |p| {
            probe.set_params(p).unwrap();
            distill_loss(&probe, &teachers, &batch, &labels, &mut rng.clone(), &schedule)
                .unwrap()
                .0
        });
    }

    #[test]
    fn student_equal_to_single_teacher_has_zero_loss() {
        let mut init = Rng::new(41);
        let teacher = small_model(&mut init, 2);
        let data = [[0.5, -1.0], [2.0, 0.3]];
        let (loss, grad) = distill_loss(
            &teacher,
            std::slice::from_ref(&teacher),
            &rows(&data),
            &[0, 0],
            &mut Rng::new(1),
            &Schedule::linear(),
        )
        .unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn exact_target_gives_zero_loss() {
        // A model whose output is fixed at the target for a single draw.
        let x0 = [1.0, -2.0];
        let schedule = Schedule::linear();
        let draw = draw_path(&x0, &schedule, &mut Rng::new(3));
        let mut model = MlpModel::zeros(2, &[2], 2, Activation::Tanh, 2).unwrap();
        let n = model.num_params();
        let params = model.params_mut();
        params[n - 2] = draw.target[0];
        params[n - 1] = draw.target[1];
        let (loss, _) = cfm_loss(&model, &[&x0], &mut Rng::new(3), &schedule).unwrap();
        assert!(loss < 1e-24);
    }

    #[test]
    fn errors() {
        let model = MlpModel::zeros(2, &[2], 2, Activation::Tanh, 2).unwrap();
        assert!(cfm_loss(&model, &[], &mut Rng::new(0), &Schedule::linear()).is_err());
        let teachers: Vec<MlpModel> = vec![model.clone()];
        assert!(matches!(
            distill_loss(&model, &teachers, &[&[0.0, 0.0]], &[1], &mut Rng::new(0), &Schedule::linear()),
            Err(Error::Argument(_))
        ));
    }
}

use gradleak::autodiff::{fd_check, Padding};
use gradleak::{Graph, Result, Tensor, Var};
use proptest::prelude::*;

fn vec_tensor(len: usize) -> impl Strategy<Value = Tensor> {
    prop::collection::vec(-2.0f64..2.0, len).prop_map(Tensor::from_vec)
}

fn grad_of(point: &Tensor, f: impl for<'g> Fn(Var<'g>) -> Result<Var<'g>>) -> Tensor {
    let graph = Graph::new();
    let x = graph.leaf(point.clone());
    let y = f(x).unwrap();
    graph.gradient(y, &[x]).unwrap()[0].value()
}

fn f<'g>(v: Var<'g>) -> Result<Var<'g>> {
    v.sigmoid()?.mul(v)?.sum()
}

fn g<'g>(v: Var<'g>) -> Result<Var<'g>> {
    v.mul(v)?.mul(v)?.sum()
}

fn gram<'g>(v: Var<'g>) -> Result<Var<'g>> {
    let m = v.reshape(&[3, 4])?;
    m.matmul(m.t()?)?.sigmoid()?.sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn gradient_is_linear_in_the_function(x in vec_tensor(6), a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let combined = grad_of(&x, |v| f(v)?.scale(a)?.add(g(v)?.scale(b)?));
        let separate = grad_of(&x, f).zip_map(&grad_of(&x, g), |p, q| a * p + b * q).unwrap();
        prop_assert!(combined.max_abs_diff(&separate) < 1e-10);
    }

    #[test]
    fn repeated_evaluation_is_bitwise_identical(x in vec_tensor(12)) {
        prop_assert_eq!(grad_of(&x, gram), grad_of(&x, gram));
    }

    #[test]
    fn sum_of_squares_gradient_is_twice_the_input(x in vec_tensor(9)) {
        let g = grad_of(&x, |v| v.mul(v)?.sum());
        prop_assert_eq!(g, x.map(|v| 2.0 * v));
    }
}

#[test]
fn hessian_vector_product_matches_closed_form() {
    // f(x) = sum(x^3) has Hessian diag(6x); differentiating <grad f, u> gives 6 x * u
    let x0 = Tensor::from_vec(vec![0.3, -1.2, 2.0, 0.7]);
    let u = Tensor::from_vec(vec![1.0, 0.5, -2.0, 3.0]);
    let graph = Graph::new();
    let x = graph.leaf(x0.clone());
    let f = x.mul(x).unwrap().mul(x).unwrap().sum().unwrap();
    let g = graph.gradient(f, &[x]).unwrap()[0];
    let gu = g.dot(graph.constant(u.clone())).unwrap();
    let hv = graph.gradient(gu, &[x]).unwrap()[0].value();
    let expected = x0.zip_map(&u, |a, b| 6.0 * a * b).unwrap();
    assert!(hv.max_abs_diff(&expected) < 1e-12);
}

#[test]
fn gradient_norm_objective_passes_finite_differences() {
    // second-order path through conv, matmul and sigmoid
    let w0 = Tensor::new(vec![2, 1, 3, 3], (0..18).map(|k| ((k as f64) * 0.71).sin() * 0.5).collect()).unwrap();
    let image = Tensor::new(vec![1, 1, 4, 4], (0..16).map(|k| ((k as f64) * 0.37).cos().abs()).collect()).unwrap();
    let report = fd_check(
        |g, x| {
            let w = g.leaf(w0.clone());
            let y = x.conv2d(w, 1, 1, Padding::Zero)?.sigmoid()?.sum()?;
            let dw = g.gradient(y, &[w])?[0];
            dw.mul(dw)?.sum()
        },
        &image,
        1e-6,
    )
    .unwrap();
    assert!(report.passes(1e-6), "{report:?}");
}

#[test]
fn circular_convolution_commutes_with_shifts() {
    let w = Tensor::new(vec![1, 1, 3, 3], vec![0.1, -0.2, 0.3, 0.5, 1.0, -0.4, 0.2, 0.0, 0.7]).unwrap();
    let img: Vec<f64> = (0..25).map(|k| ((k * 7 % 11) as f64) / 10.0).collect();
    let shifted: Vec<f64> = (0..25).map(|k| img[(k / 5 + 4) % 5 * 5 + k % 5]).collect();
    let conv = |data: Vec<f64>| {
        let graph = Graph::new();
        let x = graph.constant(Tensor::new(vec![1, 1, 5, 5], data).unwrap());
        x.conv2d(graph.constant(w.clone()), 1, 1, Padding::Circular).unwrap().value()
    };
    let a = conv(img);
    let b = conv(shifted);
    let rolled: Vec<f64> = (0..25).map(|k| a.data()[(k / 5 + 4) % 5 * 5 + k % 5]).collect();
    assert!(Tensor::from_vec(rolled).max_abs_diff(&Tensor::from_vec(b.data().to_vec())) < 1e-14);
}

#[test]
fn relu_kinks_are_flagged_not_failed() {
    let report = fd_check(|_, x| x.relu()?.sum(), &Tensor::from_vec(vec![0.0, 1.0, -1.0]), 1e-6).unwrap();
    assert_eq!(report.kinks, vec![0]);
    assert!(report.passes(1e-9));
}

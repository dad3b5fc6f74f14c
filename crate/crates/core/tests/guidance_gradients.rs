use latent_corrector::guidance::{direct_loss, loss_and_gradient, prior_guidance_loss, total_loss, GuidanceConfig};
use latent_corrector::prior::{prior_loss_and_gradient, Projector, UnitVector};
use latent_corrector::Latent;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn gaussian(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

fn unit(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| x / n).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

// From-scratch loss: normalize, optional affine map and renormalize, two-way softmax.
fn oracle_pair(a: &[f64], p: &[f64], n: &[f64], tau: f64) -> f64 {
    let (sp, sn) = (dot(a, p) / tau, dot(a, n) / tau);
    let m = sp.max(sn);
    -(sp - m) + ((sp - m).exp() + (sn - m).exp()).ln()
}

fn oracle_project(proj: &Projector, v: &[f64]) -> Vec<f64> {
    let out: Vec<f64> = (0..proj.output_dim)
        .map(|o| proj.bias[o] + dot(&proj.weight[o * proj.input_dim..(o + 1) * proj.input_dim], v))
        .collect();
    unit(&out)
}

fn oracle_total(z: &[f64], pairs: &[(Vec<f64>, Vec<f64>)], proj: &Projector, cfg: &GuidanceConfig) -> f64 {
    let a = unit(z);
    let pa = oracle_project(proj, &a);
    pairs
        .iter()
        .map(|(p, n)| {
            let (p, n) = (unit(p), unit(n));
            cfg.lambda_c * oracle_pair(&a, &p, &n, cfg.tau_prime)
                + cfg.lambda_tc * oracle_pair(&pa, &oracle_project(proj, &p), &oracle_project(proj, &n), cfg.tau_prime)
        })
        .sum::<f64>()
        / pairs.len() as f64
}

struct Instance {
    z: Vec<f64>,
    pairs: Vec<(Vec<f64>, Vec<f64>)>,
    projector: Projector,
    cfg: GuidanceConfig,
}

fn instance(rng: &mut ChaCha8Rng, i: usize) -> Instance {
    let dim = rng.gen_range(2..10);
    let out = rng.gen_range(2..10);
    let mut projector = Projector::random(dim, out, rng);
    projector.bias = gaussian(rng, out).iter().map(|b| 0.3 * b).collect();
    let (lambda_tc, lambda_c) = match i % 4 {
        0 => (0.0, rng.gen_range(0.1..200.0)),
        1 => (rng.gen_range(0.1..20.0), 0.0),
        _ => (rng.gen_range(0.1..20.0), rng.gen_range(0.1..200.0)),
    };
    let scale = 10f64.powf(rng.gen_range(-1.0..2.0));
    let pairs = (0..rng.gen_range(1..4)).map(|_| (gaussian(rng, dim), gaussian(rng, dim))).collect();
    Instance {
        z: gaussian(rng, dim).iter().map(|x| scale * x).collect(),
        pairs,
        projector,
        cfg: GuidanceConfig { lambda_tc, lambda_c, tau_prime: rng.gen_range(0.1..1.0), ..Default::default() },
    }
}

fn latent_pairs(inst: &Instance) -> Vec<(Latent, Latent)> {
    inst.pairs.iter().map(|(p, n)| (Latent::new(p.clone()), Latent::new(n.clone()))).collect()
}

fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    diff / scale.max(1e-8)
}

#[test]
fn analytic_gradient_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let h = 1e-5;
    let mut worst = 0.0f64;
    for i in 0..100 {
        let inst = instance(&mut rng, i);
        let pairs = latent_pairs(&inst);
        let (_, grad) = loss_and_gradient(&Latent::new(inst.z.clone()), &pairs, &inst.projector, &inst.cfg).unwrap();
        let fd: Vec<f64> = (0..inst.z.len())
            .map(|k| {
                let mut plus = inst.z.clone();
                let mut minus = inst.z.clone();
                plus[k] += h;
                minus[k] -= h;
                (oracle_total(&plus, &inst.pairs, &inst.projector, &inst.cfg)
                    - oracle_total(&minus, &inst.pairs, &inst.projector, &inst.cfg))
                    / (2.0 * h)
            })
            .collect();
        let err = relative_error(grad.as_slice(), &fd);
        worst = worst.max(err);
        assert!(err <= 1e-5, "instance {i}: relative error {err}");
    }
    eprintln!("worst relative error {worst:.3e}");
}

#[test]
fn library_loss_matches_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for i in 0..100 {
        let inst = instance(&mut rng, i);
        let (loss, _) = loss_and_gradient(&Latent::new(inst.z.clone()), &latent_pairs(&inst), &inst.projector, &inst.cfg).unwrap();
        let expected = oracle_total(&inst.z, &inst.pairs, &inst.projector, &inst.cfg);
        assert!((loss - expected).abs() <= 1e-10 * expected.abs().max(1.0), "{loss} vs {expected}");
    }
}

#[test]
fn single_term_losses_match_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for i in 0..20 {
        let inst = instance(&mut rng, i);
        let (p, n) = &inst.pairs[0];
        let (z, lp, ln) = (Latent::new(inst.z.clone()), Latent::new(p.clone()), Latent::new(n.clone()));
        let d = direct_loss(&z, &lp, &ln, inst.cfg.tau_prime).unwrap();
        assert!((d - oracle_pair(&unit(&inst.z), &unit(p), &unit(n), inst.cfg.tau_prime)).abs() < 1e-10);
        let pr = prior_guidance_loss(&z, &lp, &ln, &inst.projector, inst.cfg.tau_prime).unwrap();
        let proj = |v: &[f64]| oracle_project(&inst.projector, &unit(v));
        assert!((pr - oracle_pair(&proj(&inst.z), &proj(p), &proj(n), inst.cfg.tau_prime)).abs() < 1e-10);
    }
}

#[test]
fn total_loss_is_scale_invariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for i in 0..50 {
        let inst = instance(&mut rng, i);
        let (p, n) = (Latent::new(inst.pairs[0].0.clone()), Latent::new(inst.pairs[0].1.clone()));
        let base = total_loss(&Latent::new(inst.z.clone()), &p, &n, &inst.projector, &inst.cfg).unwrap();
        for c in [0.1, 1.0, 10.0] {
            let z = Latent::new(inst.z.iter().map(|x| c * x).collect());
            let scaled = total_loss(&z, &p, &n, &inst.projector, &inst.cfg).unwrap();
            assert!((scaled - base).abs() <= 1e-10, "c = {c}: {scaled} vs {base}");
        }
    }
}

#[test]
fn projector_parameter_gradient_matches_central_differences() {
    use latent_corrector::prior::prior_loss;
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let h = 1e-6;
    for _ in 0..20 {
        let dim = rng.gen_range(2..6);
        let proj = Projector::random(dim, rng.gen_range(2..6), &mut rng);
        let u = |rng: &mut ChaCha8Rng| UnitVector::normalize(&gaussian(rng, dim)).unwrap().0;
        let (a, p) = (u(&mut rng), u(&mut rng));
        let negs: Vec<UnitVector> = (0..3).map(|_| u(&mut rng)).collect();
        let tau = 0.5;
        let (_, grads) = prior_loss_and_gradient(&a, &p, &negs, &proj, tau).unwrap();
        let fd = |k: usize, bias: bool| {
            let mut plus = proj.clone();
            let mut minus = proj.clone();
            if bias {
                plus.bias[k] += h;
                minus.bias[k] -= h;
            } else {
                plus.weight[k] += h;
                minus.weight[k] -= h;
            }
            (prior_loss(&a, &p, &negs, &plus, tau).unwrap() - prior_loss(&a, &p, &negs, &minus, tau).unwrap()) / (2.0 * h)
        };
        let fw: Vec<f64> = (0..proj.weight.len()).map(|k| fd(k, false)).collect();
        let fb: Vec<f64> = (0..proj.bias.len()).map(|k| fd(k, true)).collect();
        assert!(relative_error(&grads.weight, &fw) < 1e-6);
        assert!(relative_error(&grads.bias, &fb) < 1e-6);
    }
}

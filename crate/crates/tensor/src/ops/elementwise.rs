use crate::{Float, Graph, Tensor, Var};

fn zip_map<F: Float>(a: &Tensor<F>, b: &Tensor<F>, f: impl Fn(F, F) -> F) -> Tensor<F> {
    assert_eq!(a.shape(), b.shape(), "elementwise shape mismatch");
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::from_vec(a.shape().to_vec(), data)
}

impl<F: Float> Graph<F> {
    pub fn add(&self, a: &Var<F>, b: &Var<F>) -> Var<F> {
        let out = zip_map(a.value(), b.value(), |x, y| x + y);
        self.record(out, &[a, b], |g, needs| {
            vec![needs[0].then(|| g.clone()), needs[1].then(|| g.clone())]
        })
    }

    pub fn sub(&self, a: &Var<F>, b: &Var<F>) -> Var<F> {
        let out = zip_map(a.value(), b.value(), |x, y| x - y);
        self.record(out, &[a, b], |g, needs| {
            vec![needs[0].then(|| g.clone()), needs[1].then(|| g.map(|v| -v))]
        })
    }

    pub fn mul(&self, a: &Var<F>, b: &Var<F>) -> Var<F> {
        let out = zip_map(a.value(), b.value(), |x, y| x * y);
        let (av, bv) = (a.shared(), b.shared());
        self.record(out, &[a, b], move |g, needs| {
            vec![
                needs[0].then(|| zip_map(g, &bv, |x, y| x * y)),
                needs[1].then(|| zip_map(g, &av, |x, y| x * y)),
            ]
        })
    }

    pub fn scale(&self, a: &Var<F>, factor: F) -> Var<F> {
        let out = a.value().map(|v| v * factor);
        self.record(out, &[a], move |g, _| vec![Some(g.map(|v| v * factor))])
    }

    /// Sum of any number of same-shaped values.
    pub fn add_n(&self, parts: &[&Var<F>]) -> Var<F> {
        assert!(!parts.is_empty());
        let mut out = parts[0].value().clone();
        for p in &parts[1..] {
            out.add_assign(p.value());
        }
        self.record(out, parts, |g, needs| needs.iter().map(|&n| n.then(|| g.clone())).collect())
    }

    pub fn leaky_relu(&self, a: &Var<F>, slope: F) -> Var<F> {
        let out = a.value().map(|v| if v > F::zero() { v } else { v * slope });
        let av = a.shared();
        self.record(out, &[a], move |g, _| {
            vec![Some(zip_map(g, &av, |gv, x| if x > F::zero() { gv } else { gv * slope }))]
        })
    }

    pub fn sigmoid(&self, a: &Var<F>) -> Var<F> {
        let out = a.value().map(|v| F::one() / (F::one() + (-v).exp()));
        let ov = std::sync::Arc::new(out.clone());
        self.record(out, &[a], move |g, _| vec![Some(zip_map(g, &ov, |gv, s| gv * s * (F::one() - s)))])
    }

    /// `x (N,C,H,W) * s (N,C,1,1)` broadcast over space.
    pub fn mul_channel(&self, x: &Var<F>, s: &Var<F>) -> Var<F> {
        let (n, c, h, w) = x.dims4();
        assert_eq!(s.shape(), &[n, c, 1, 1], "mul_channel scale shape");
        let plane = h * w;
        let mut out = x.value().clone();
        for (chunk, &sv) in out.data_mut().chunks_mut(plane).zip(s.value().data()) {
            for v in chunk {
                *v *= sv;
            }
        }
        let (xv, sv) = (x.shared(), s.shared());
        self.record(out, &[x, s], move |g, needs| {
            let dx = needs[0].then(|| {
                let mut d = g.clone();
                for (chunk, &s) in d.data_mut().chunks_mut(plane).zip(sv.data()) {
                    for v in chunk {
                        *v *= s;
                    }
                }
                d
            });
            let ds = needs[1].then(|| {
                let data = g
                    .data()
                    .chunks(plane)
                    .zip(xv.data().chunks(plane))
                    .map(|(gc, xc)| gc.iter().zip(xc).map(|(&a, &b)| a * b).sum())
                    .collect();
                Tensor::from_vec(vec![n, c, 1, 1], data)
            });
            vec![dx, ds]
        })
    }

    pub fn concat_channels(&self, parts: &[&Var<F>]) -> Var<F> {
        let values: Vec<&Tensor<F>> = parts.iter().map(|p| p.value()).collect();
        let out = Tensor::cat_channels(&values);
        let widths: Vec<usize> = parts.iter().map(|p| p.shape()[1]).collect();
        self.record(out, parts, move |g, needs| {
            let mut start = 0;
            widths
                .iter()
                .zip(needs)
                .map(|(&w, &need)| {
                    let part = need.then(|| g.narrow_channels(start, w));
                    start += w;
                    part
                })
                .collect()
        })
    }

    pub fn narrow_channels(&self, x: &Var<F>, start: usize, len: usize) -> Var<F> {
        let out = x.value().narrow_channels(start, len);
        let (n, c, h, w) = x.dims4();
        self.record(out, &[x], move |g, _| {
            let plane = h * w;
            let mut d = Tensor::zeros(vec![n, c, h, w]);
            for b in 0..n {
                let dst = (b * c + start) * plane;
                let src = b * len * plane;
                d.data_mut()[dst..dst + len * plane].copy_from_slice(&g.data()[src..src + len * plane]);
            }
            vec![Some(d)]
        })
    }

    pub fn reshape(&self, x: &Var<F>, shape: &[usize]) -> Var<F> {
        let out = x.value().clone().reshape(shape.to_vec());
        let orig = x.shape().to_vec();
        self.record(out, &[x], move |g, _| vec![Some(g.clone().reshape(orig.clone()))])
    }

    /// Softmax along `axis`.
    pub fn softmax(&self, x: &Var<F>, axis: usize) -> Var<F> {
        let shape = x.shape().to_vec();
        assert!(axis < shape.len());
        let dim = shape[axis];
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let src = x.value().data();
        let mut out = vec![F::zero(); src.len()];
        for o in 0..outer {
            let base = o * dim * inner;
            for i in 0..inner {
                let mut m = F::neg_infinity();
                for d in 0..dim {
                    m = m.max(src[base + d * inner + i]);
                }
                let mut z = F::zero();
                for d in 0..dim {
                    let e = (src[base + d * inner + i] - m).exp();
                    out[base + d * inner + i] = e;
                    z += e;
                }
                for d in 0..dim {
                    out[base + d * inner + i] /= z;
                }
            }
        }
        let out = Tensor::from_vec(shape.clone(), out);
        let ov = std::sync::Arc::new(out.clone());
        self.record(out, &[x], move |g, _| {
            let (p, gd) = (ov.data(), g.data());
            let mut d = vec![F::zero(); p.len()];
            for o in 0..outer {
                let base = o * dim * inner;
                for i in 0..inner {
                    let mut dot = F::zero();
                    for k in 0..dim {
                        let j = base + k * inner + i;
                        dot += gd[j] * p[j];
                    }
                    for k in 0..dim {
                        let j = base + k * inner + i;
                        d[j] = p[j] * (gd[j] - dot);
                    }
                }
            }
            vec![Some(Tensor::from_vec(shape.clone(), d))]
        })
    }

    /// Global average pool `(N,C,H,W) -> (N,C,1,1)`.
    pub fn mean_spatial(&self, x: &Var<F>) -> Var<F> {
        let (n, c, h, w) = x.dims4();
        let plane = h * w;
        let inv = F::one() / F::lit(plane as f64);
        let data = x.value().data().chunks(plane).map(|ch| ch.iter().copied().sum::<F>() * inv).collect();
        let out = Tensor::from_vec(vec![n, c, 1, 1], data);
        self.record(out, &[x], move |g, _| {
            let mut d = Vec::with_capacity(n * c * plane);
            for &gv in g.data() {
                d.extend(std::iter::repeat_n(gv * inv, plane));
            }
            vec![Some(Tensor::from_vec(vec![n, c, h, w], d))]
        })
    }

    pub fn sum_all(&self, x: &Var<F>) -> Var<F> {
        let out = Tensor::scalar(x.value().sum());
        let shape = x.shape().to_vec();
        self.record(out, &[x], move |g, _| vec![Some(Tensor::full(shape.clone(), g.item()))])
    }

    /// `mean(sqrt((pred - target)^2 + eps^2))`.
    pub fn charbonnier(&self, pred: &Var<F>, target: &Var<F>, eps: F) -> Var<F> {
        assert_eq!(pred.shape(), target.shape(), "charbonnier shape mismatch");
        let count = F::lit(pred.value().numel() as f64);
        let eps2 = eps * eps;
        let loss: F = pred
            .value()
            .data()
            .iter()
            .zip(target.value().data())
            .map(|(&p, &t)| ((p - t) * (p - t) + eps2).sqrt())
            .sum::<F>()
            / count;
        let (pv, tv) = (pred.shared(), target.shared());
        self.record(Tensor::scalar(loss), &[pred, target], move |g, needs| {
            let scale = g.item() / count;
            let d = zip_map(&pv, &tv, |p, t| scale * (p - t) / ((p - t) * (p - t) + eps2).sqrt());
            let neg = needs[1].then(|| d.map(|v| -v));
            vec![needs[0].then_some(d), neg]
        })
    }
}

//! Nelder-Mead downhill simplex minimization with the classical coefficients
//! (reflection 1, expansion 2, contraction 1/2, shrink 1/2). The convergence
//! test uses the characteristic simplex size: the average distance of the
//! vertices from their centroid.

use crate::{Error, Result};

/// One accepted iteration of the simplex loop.
#[derive(Debug, Clone)]
pub struct NmTraceRow {
    pub index: usize,
    pub x: Vec<f64>,
    pub value: f64,
    pub size: f64,
}

#[derive(Debug, Clone)]
pub struct NmResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
    pub trace: Vec<NmTraceRow>,
}

/// Minimizes `f` from `x0` with an initial simplex of per-coordinate steps.
/// Infeasible points may return +inf; they are ranked worst. Stops when the
/// simplex size drops to `tol` or after `max_iter` iterations.
pub fn nelder_mead_minimize<F>(
    mut f: F,
    x0: &[f64],
    steps: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<NmResult>
where
    F: FnMut(&[f64]) -> f64,
{
    let dim = x0.len();
    assert_eq!(steps.len(), dim);
    assert!(dim >= 1 && tol > 0.0 && max_iter >= 1);
    assert!(steps.iter().all(|&s| s > 0.0), "steps must be positive");

    // initial simplex: x0 plus one step along each coordinate
    let mut vertices: Vec<Vec<f64>> = Vec::with_capacity(dim + 1);
    vertices.push(x0.to_vec());
    for i in 0..dim {
        let mut v = x0.to_vec();
        v[i] += steps[i];
        vertices.push(v);
    }
    let mut values: Vec<f64> = vertices.iter().map(|v| f(v)).collect();
    if values.iter().all(|v| !v.is_finite()) {
        return Err(Error::InfeasibleStart);
    }

    let mut trace = Vec::new();
    let mut iterations = 0;
    let mut converged = false;

    for it in 1..=max_iter {
        iterations = it;
        order(&mut vertices, &mut values);

        // centroid of all vertices but the worst
        let mut centroid = vec![0.0; dim];
        for v in vertices.iter().take(dim) {
            for (c, x) in centroid.iter_mut().zip(v) {
                *c += x;
            }
        }
        centroid.iter_mut().for_each(|c| *c /= dim as f64);

        let worst = vertices[dim].clone();
        let reflected = affine(&centroid, &worst, 1.0);
        let fr = f(&reflected);

        if fr < values[0] {
            // try to expand
            let expanded = affine(&centroid, &worst, 2.0);
            let fe = f(&expanded);
            if fe < fr {
                vertices[dim] = expanded;
                values[dim] = fe;
            } else {
                vertices[dim] = reflected;
                values[dim] = fr;
            }
        } else if fr < values[dim - 1] {
            vertices[dim] = reflected;
            values[dim] = fr;
        } else {
            // contraction: outside towards the reflected point when it beats
            // the worst, inside otherwise
            let (candidate, f_limit) = if fr < values[dim] {
                (affine(&centroid, &worst, 0.5), fr)
            } else {
                (affine(&centroid, &worst, -0.5), values[dim])
            };
            let fc = f(&candidate);
            if fc <= f_limit {
                vertices[dim] = candidate;
                values[dim] = fc;
            } else {
                // shrink everything towards the best vertex
                let best = vertices[0].clone();
                for k in 1..=dim {
                    for (x, b) in vertices[k].iter_mut().zip(&best) {
                        *x = b + 0.5 * (*x - b);
                    }
                    values[k] = f(&vertices[k]);
                }
            }
        }

        order(&mut vertices, &mut values);
        let size = simplex_size(&vertices);
        trace.push(NmTraceRow {
            index: it,
            x: vertices[0].clone(),
            value: values[0],
            size,
        });
        if size <= tol {
            converged = true;
            break;
        }
    }

    order(&mut vertices, &mut values);
    Ok(NmResult {
        x: vertices[0].clone(),
        value: values[0],
        iterations,
        converged,
        trace,
    })
}

/// Stable sort of the vertices by value; +inf (rejected points) sinks last.
fn order(vertices: &mut [Vec<f64>], values: &mut [f64]) {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let vs: Vec<Vec<f64>> = idx.iter().map(|&i| vertices[i].clone()).collect();
    let fs: Vec<f64> = idx.iter().map(|&i| values[i]).collect();
    vertices.clone_from_slice(&vs);
    values.copy_from_slice(&fs);
}

/// centroid + t (centroid - worst)
fn affine(centroid: &[f64], worst: &[f64], t: f64) -> Vec<f64> {
    centroid
        .iter()
        .zip(worst)
        .map(|(c, w)| c + t * (c - w))
        .collect()
}

/// Average distance of the vertices from their centroid.
fn simplex_size(vertices: &[Vec<f64>]) -> f64 {
    let m = vertices.len();
    let dim = vertices[0].len();
    let mut centroid = vec![0.0; dim];
    for v in vertices {
        for (c, x) in centroid.iter_mut().zip(v) {
            *c += x;
        }
    }
    centroid.iter_mut().for_each(|c| *c /= m as f64);
    vertices
        .iter()
        .map(|v| {
            v.iter()
                .zip(&centroid)
                .map(|(x, c)| (x - c) * (x - c))
                .sum::<f64>()
                .sqrt()
        })
        .sum::<f64>()
        / m as f64
}

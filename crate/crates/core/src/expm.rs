//! Dense matrix exponential by scaling and squaring with a degree-13 Padé
//! approximant (Higham 2005). Lower degrees are used when the 1-norm allows.

use nalgebra::DMatrix;

const THETA: [(usize, f64); 5] = [
    (3, 1.495585217958292e-2),
    (5, 2.539_398_330_063_23e-1),
    (7, 9.504178996162932e-1),
    (9, 2.097847961257068e0),
    (13, 5.371920351148152e0),
];

const B13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];

fn pade_coefficients(m: usize) -> &'static [f64] {
    match m {
        3 => &[120.0, 60.0, 12.0, 1.0],
        5 => &[30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0],
        7 => &[17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0],
        9 => &[
            17643225600.0,
            8821612800.0,
            2075673600.0,
            302702400.0,
            30270240.0,
            2162160.0,
            110880.0,
            3960.0,
            90.0,
            1.0,
        ],
        _ => &B13,
    }
}

fn one_norm(a: &DMatrix<f64>) -> f64 {
    a.column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

fn solve_pade(u: DMatrix<f64>, v: DMatrix<f64>) -> DMatrix<f64> {
    let p = &v + &u;
    let q = &v - &u;
    q.lu().solve(&p).expect("Padé denominator is singular")
}

/// `exp(a)` for a square matrix.
pub fn expm(a: &DMatrix<f64>) -> DMatrix<f64> {
    assert!(a.is_square(), "expm needs a square matrix");
    let n = a.nrows();
    let ident = DMatrix::<f64>::identity(n, n);
    if n == 0 {
        return ident;
    }
    let norm = one_norm(a);
    for &(m, theta) in &THETA[..4] {
        if norm <= theta {
            let b = pade_coefficients(m);
            let a2 = a * a;
            let mut even = ident.clone() * b[0];
            let mut odd = ident.clone() * b[1];
            let mut power = ident.clone();
            for k in 1..=(m / 2) {
                power = &power * &a2;
                even += &power * b[2 * k];
                odd += &power * b[2 * k + 1];
            }
            let u = a * odd;
            return solve_pade(u, even);
        }
    }

    let theta13 = THETA[4].1;
    let s = if norm > theta13 {
        (norm / theta13).log2().ceil().max(0.0) as i32
    } else {
        0
    };
    let scaled = a * 2f64.powi(-s);
    let b = &B13;
    let a2 = &scaled * &scaled;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let u_inner = &a6 * (&a6 * b[13] + &a4 * b[11] + &a2 * b[9]) + &a6 * b[7] + &a4 * b[5] + &a2 * b[3] + &ident * b[1];
    let u = &scaled * u_inner;
    let v = &a6 * (&a6 * b[12] + &a4 * b[10] + &a2 * b[8]) + &a6 * b[6] + &a4 * b[4] + &a2 * b[2] + &ident * b[0];
    let mut r = solve_pade(u, v);
    for _ in 0..s {
        r = &r * &r;
    }
    r
}

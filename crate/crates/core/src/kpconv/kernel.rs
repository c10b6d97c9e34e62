use crate::Point3;

/// Rigid kernel: `K` offsets in a ball of radius `radius`, one at the origin.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelDisposition {
    pub offsets: Vec<Point3>,
    pub radius: f64,
    /// Influence distance of each kernel point.
    pub sigma: f64,
}

/// Relaxed unit-ball template for `K = 15`, produced by [`relax_template`].
const TEMPLATE_15: [Point3; 15] = [
    [0.0, 0.0, 0.0],
    [0.40580716316351206, 0.006267850147529795, 0.9139372299998019],
    [-0.4316067880724394, 0.34039570123204954, 0.835371981258968],
    [-0.07042933393256373, -0.7456753711953408, 0.6625767500558001],
    [0.5431258876963556, 0.7445450461164161, 0.3881584011940865],
    [-0.9131276108791146, -0.2148109085368794, 0.34648844111133126],
    [0.8418286838434381, -0.46879062894631407, 0.2675066602358605],
    [-0.3099512357830612, 0.938973359583197, 0.1491953800544681],
    [-0.5043376866500857, -0.850519980009196, -0.14919538005446745],
    [0.9228521372424247, 0.277099475850362, -0.2675066602358597],
    [-0.8457055401437336, 0.4058668495288006, -0.3464884411113332],
    [0.3705896093457139, -0.8437987894204646, -0.3881584011940869],
    [0.09132436574848937, 0.7434056164074437, -0.6625767500557991],
    [-0.4946294642604662, -0.23978187173527266, -0.8353719812589679],
    [0.39499619582158463, -0.09325633976714513, -0.9139372299998021],
];

/// Deterministic repulsion relaxation of `k - 1` points inside the unit ball,
/// with one point pinned at the origin.
pub fn relax_template(k: usize) -> Vec<Point3> {
    let mut pts = vec![[0.0; 3]];
    let m = k.saturating_sub(1);
    // Fibonacci-sphere start
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    for i in 0..m {
        let z = 1.0 - 2.0 * (i as f64 + 0.5) / m as f64;
        let r = (1.0 - z * z).sqrt();
        let t = golden * i as f64;
        pts.push([0.8 * r * t.cos(), 0.8 * r * t.sin(), 0.8 * z]);
    }
    let step = 0.01;
    for _ in 0..1000 {
        let mut grad = vec![[0.0; 3]; pts.len()];
        for i in 1..pts.len() {
            for j in 0..pts.len() {
                if i == j {
                    continue;
                }
                let d = [pts[i][0] - pts[j][0], pts[i][1] - pts[j][1], pts[i][2] - pts[j][2]];
                let d2 = d[0] * d[0] + d[1] * d[1] + d[2] * d[2];
                let inv3 = 1.0 / (d2 * d2.sqrt());
                for a in 0..3 {
                    grad[i][a] += d[a] * inv3;
                }
            }
        }
        for i in 1..pts.len() {
            let g = grad[i];
            let gn = (g[0] * g[0] + g[1] * g[1] + g[2] * g[2]).sqrt().max(1e-12);
            for a in 0..3 {
                pts[i][a] += step * g[a] / gn.max(1.0);
            }
            let n = (pts[i][0] * pts[i][0] + pts[i][1] * pts[i][1] + pts[i][2] * pts[i][2]).sqrt();
            if n > 1.0 {
                for a in 0..3 {
                    pts[i][a] /= n;
                }
            }
        }
    }
    pts.truncate(k.max(1));
    pts
}

/// Kernel of `k` points scaled to `radius`; `sigma = radius / 1.5`.
pub fn kernel_disposition(k: usize, radius: f64) -> KernelDisposition {
    let template = if k == TEMPLATE_15.len() { TEMPLATE_15.to_vec() } else { relax_template(k) };
    KernelDisposition {
        offsets: template.iter().map(|p| [p[0] * radius, p[1] * radius, p[2] * radius]).collect(),
        radius,
        sigma: radius / 1.5,
    }
}

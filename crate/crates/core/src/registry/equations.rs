//! Right-hand sides of the registered compartmental systems.
//!
//! `y` holds the state in registry order, `p` the estimated parameters in
//! registry order and `c` the fixed constants. All models are autonomous.

use super::ModelId;
use crate::dual::Real;

pub(crate) fn rhs<T: Real>(id: ModelId, y: &[T], p: &[T], c: &[f64], dy: &mut [T]) {
    let one = T::cst(1.0);
    match id {
        ModelId::Covid => {
            let [s, i, _d, _r] = [y[0], y[1], y[2], y[3]];
            let [alpha, beta, gamma] = [p[0], p[1], p[2]];
            let n = T::cst(c[0]);
            let infection = alpha / n * s * i;
            dy[0] = -infection;
            dy[1] = infection - beta * i - gamma * i;
            dy[2] = gamma * i;
            dy[3] = beta * i;
        }
        ModelId::Hiv => {
            let [t, i, v] = [y[0], y[1], y[2]];
            let [s, mu_t, mu_i, mu_b, mu_v, r, n, t_max, k1, k1p] =
                [p[0], p[1], p[2], p[3], p[4], p[5], p[6], p[7], p[8], p[9]];
            dy[0] = s - mu_t * t + r * t * (one - (t + i) / t_max) - k1 * v * t;
            dy[1] = k1p * v * t - mu_i * i;
            dy[2] = n * mu_b * i - k1 * v * t - mu_v * v;
        }
        ModelId::Smallpox => {
            let [s, en, ei, ci, i, q, _u, _v] = [y[0], y[1], y[2], y[3], y[4], y[5], y[6], y[7]];
            let [chi1, chi2, eps1, eps2, rho, theta, alpha, gamma] =
                [p[0], p[1], p[2], p[3], p[4], p[5], p[6], p[7]];
            let beta = T::cst(c[0]);
            let phi = T::cst(c[1]);
            let contact = beta * s * i;
            dy[0] = chi1 * (one - eps1) * ci - (phi + rho - phi * rho) * contact;
            dy[1] = phi * (one - rho) * contact - alpha * en;
            dy[2] = phi * rho * contact - (chi1 * eps2 + alpha * (one - eps2)) * ei;
            dy[3] = rho * (one - phi) * contact - chi1 * ci;
            dy[4] = alpha * (one - theta) * en - (theta + gamma) * i;
            dy[5] = alpha * (one - eps2) * ei + theta * (alpha * en + i) - chi2 * q;
            dy[6] = gamma * i + chi2 * q;
            dy[7] = chi1 * (eps2 * ei + eps1 * ci);
        }
        ModelId::Tuberculosis => {
            let [s, l, i, t] = [y[0], y[1], y[2], y[3]];
            let [delta, beta, cc, mu, k, r1, r2, beta_p, d] =
                [p[0], p[1], p[2], p[3], p[4], p[5], p[6], p[7], p[8]];
            let n = T::cst(c[0]);
            let infection = beta * cc * s * i / n;
            let reinfection = beta_p * cc * t / n;
            dy[0] = delta - infection - mu * s;
            dy[1] = infection - (mu + k + r1) * l + reinfection;
            dy[2] = k * l - (mu + d) * i - r2 * i;
            dy[3] = r1 * l + r2 * i - reinfection - mu * t;
        }
        ModelId::Pneumonia => {
            let [s, v, cc, i, r] = [y[0], y[1], y[2], y[3], y[4]];
            // k, tau and the second chi are sampled but do not enter the equations.
            let [pi, lambda, _k, chi, _tau, phi, _chi_b, pp, theta, mu, alpha, rho, beta, eta, q, delta] = [
                p[0], p[1], p[2], p[3], p[4], p[5], p[6], p[7], p[8], p[9], p[10], p[11], p[12],
                p[13], p[14], p[15],
            ];
            dy[0] = (one - pp) * pi + phi * v + delta * r - (mu + lambda + theta) * s;
            dy[1] = pp * pi + theta * s - (mu + lambda + phi) * v;
            dy[2] = rho * lambda * s + rho * lambda * v + (one - q) * eta * i
                - (mu + beta + chi) * cc;
            dy[3] = (one - rho) * lambda * s + (one - rho) * lambda * v + chi * cc
                - (mu + alpha + eta) * i;
            dy[4] = beta * cc + q * eta * i - (mu + delta) * r;
        }
        ModelId::Dengue => {
            let [sb, eb, ib, rb, sv, ev, iv] = [y[0], y[1], y[2], y[3], y[4], y[5], y[6]];
            let [pi_b, pi_v, lambda_b, lambda_v, delta_b, delta_v, mu_b, mu_v, sigma_b, sigma_v, tau_b] = [
                p[0], p[1], p[2], p[3], p[4], p[5], p[6], p[7], p[8], p[9], p[10],
            ];
            dy[0] = pi_b - lambda_b * sb - mu_b * sb;
            dy[1] = lambda_b * sb - (sigma_b + mu_b) * eb;
            dy[2] = sigma_b * eb - (tau_b + mu_b + delta_b) * ib;
            dy[3] = tau_b * ib - mu_b * rb;
            dy[4] = pi_v - lambda_v * sv - mu_v * sv;
            dy[5] = lambda_v * sv - (sigma_v + mu_v) * ev;
            dy[6] = sigma_v * ev - (mu_v + delta_v) * iv;
        }
        ModelId::Ebola => {
            let [s, e, i, h, f, _r] = [y[0], y[1], y[2], y[3], y[4], y[5]];
            let [beta1, beta_h, beta_f, alpha, gamma_h, theta1, gamma_i, delta1, gamma_d, delta2, gamma_f, gamma_ih, gamma_dh] = [
                p[0], p[1], p[2], p[3], p[4], p[5], p[6], p[7], p[8], p[9], p[10], p[11], p[12],
            ];
            let n = T::cst(c[0]);
            let infection = (beta1 * s * i + beta_h * s * h + beta_f * s * f) / n;
            let to_hospital = gamma_h * theta1;
            let recover = gamma_i * (one - theta1) * (one - delta1);
            let die = gamma_d * (one - theta1) * delta1;
            dy[0] = -infection;
            dy[1] = infection - alpha * e;
            dy[2] = alpha * e - (to_hospital + recover + die) * i;
            dy[3] = to_hospital * i - (gamma_dh * delta2 + gamma_ih * (one - delta2)) * h;
            dy[4] = die * i + gamma_dh * delta2 * h - gamma_f * f;
            dy[5] = recover * i + gamma_ih * (one - delta2) * h + gamma_f * f;
        }
        ModelId::Anthrax => {
            let [s, i, a, cc] = [y[0], y[1], y[2], y[3]];
            let [r, mu, kappa, eta_a, eta_c, eta_i, tau, gamma, delta, k_cap, beta, sigma] = [
                p[0], p[1], p[2], p[3], p[4], p[5], p[6], p[7], p[8], p[9], p[10], p[11],
            ];
            let live = s + i;
            let direct = eta_i * s * i / live;
            dy[0] = r * live * (one - live / k_cap) - eta_a * a * s - eta_c * s * cc - direct
                - mu * s
                + tau * i;
            dy[1] = eta_a * a * s + eta_c * s * cc + direct - (gamma + mu + tau) * i;
            dy[2] = -sigma * a + beta * cc;
            dy[3] = (gamma + mu) * i - delta * live * cc - kappa * cc;
        }
        ModelId::Polio => {
            let [sc, sa, ic, ia, rc, ra] = [y[0], y[1], y[2], y[3], y[4], y[5]];
            let [mu, alpha, gamma_a, gamma_c, beta_aa, beta_cc, beta_ac, beta_ca] =
                [p[0], p[1], p[2], p[3], p[4], p[5], p[6], p[7]];
            let n = T::cst(c[0]);
            let nc = T::cst(c[1]);
            let na = T::cst(c[2]);
            let force_c = beta_cc / nc * ic + beta_ca / nc * ia;
            let force_a = beta_ac / na * ic + beta_aa / na * ia;
            dy[0] = mu * n - (alpha + mu + force_c) * sc;
            dy[1] = alpha * sc - (mu + force_a) * sa;
            dy[2] = force_c * sc - (gamma_c + alpha + mu) * ic;
            dy[3] = force_a * sa - (gamma_a + mu) * ia + alpha * ic;
            dy[4] = gamma_c * ic - mu * rc - alpha * rc;
            dy[5] = gamma_a * ia - mu * ra + alpha * rc;
        }
        ModelId::Measles => {
            let [s, e, i] = [y[0], y[1], y[2]];
            let [mu, beta1, gamma, sigma] = [p[0], p[1], p[2], p[3]];
            let n = T::cst(c[0]);
            let infection = beta1 * s * i / n;
            dy[0] = mu * (n - s) - infection;
            dy[1] = infection - (mu + sigma) * e;
            dy[2] = sigma * e - (mu + gamma) * i;
        }
        ModelId::Zika => {
            let [sb, eb, ib1, ib2, ab, _rb, sv, ev, iv] =
                [y[0], y[1], y[2], y[3], y[4], y[5], y[6], y[7], y[8]];
            let [a, b, cc, eta, beta, kappa, tau, theta_pct, m, nu_b, nu_v, gamma_b1, gamma_b2, gamma_b, mu_v] = [
                p[0], p[1], p[2], p[3], p[4], p[5], p[6], p[7], p[8], p[9], p[10], p[11], p[12],
                p[13], p[14],
            ];
            let nb = T::cst(c[0]);
            let theta = theta_pct / T::cst(100.0);
            let force = a * b * (iv / nb) * sb + beta * ((kappa * eb + ib1 + tau * ib2) / nb) * sb;
            let vector_force = a * cc * ((eta * eb + ib1) / nb) * sv;
            dy[0] = -force;
            dy[1] = theta * force - nu_b * eb;
            dy[2] = nu_b * eb - gamma_b1 * ib1;
            dy[3] = gamma_b1 * ib1 - gamma_b2 * ib2;
            dy[4] = (one - theta) * force - gamma_b * ab;
            dy[5] = gamma_b2 * ib2 + gamma_b * ab;
            dy[6] = mu_v * m * nb - vector_force - mu_v * sv;
            dy[7] = vector_force - (nu_v + mu_v) * ev;
            dy[8] = nu_v * ev - mu_v * iv;
        }
    }
}

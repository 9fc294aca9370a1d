//! Closed-form M/M/c waiting time.

use crate::SimError;

/// Probability that an arrival waits, `C(c, λ/μ)`, via the Erlang-B
/// recursion `B(k) = a·B(k-1) / (k + a·B(k-1))`.
pub fn erlang_c(arrival_rate: f64, service_rate: f64, servers: u32) -> Result<f64, SimError> {
    check(arrival_rate, service_rate, servers)?;
    let a = arrival_rate / service_rate;
    let mut b = 1.0;
    for k in 1..=servers {
        b = a * b / (f64::from(k) + a * b);
    }
    let c = f64::from(servers);
    Ok(c * b / (c - a * (1.0 - b)))
}

/// Mean time in queue (excluding service) for M/M/c.
pub fn erlang_c_wait(arrival_rate: f64, service_rate: f64, servers: u32) -> Result<f64, SimError> {
    let p_wait = erlang_c(arrival_rate, service_rate, servers)?;
    Ok(p_wait / (f64::from(servers) * service_rate - arrival_rate))
}

fn check(arrival_rate: f64, service_rate: f64, servers: u32) -> Result<(), SimError> {
    if servers == 0 || service_rate.is_nan() || service_rate <= 0.0 || arrival_rate.is_nan() || arrival_rate < 0.0 {
        return Err(SimError::InvalidConfig(format!(
            "need c >= 1, mu > 0, lambda >= 0 (got c={servers}, mu={service_rate}, lambda={arrival_rate})"
        )));
    }
    if arrival_rate >= f64::from(servers) * service_rate {
        return Err(SimError::Unstable { arrival_rate, capacity: f64::from(servers) * service_rate });
    }
    Ok(())
}

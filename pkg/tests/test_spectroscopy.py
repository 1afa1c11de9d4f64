import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from nanocoupling.core import TWO_PI, DomainError
from nanocoupling.spectroscopy import (KAPPA_HEADER, SchemaError, TransmissionParams, field_linewidth_H,
                                       fit_kappa_curve, fit_lorentzian, fit_sqrtN, kappa_from_map, kappa_of_field,
                                       read_kappa_csv, read_table, read_trace_csv, s21, synthetic_kappa,
                                       transmission_map, write_kappa_csv)

W_R = TWO_PI * 1.4e9
P = TransmissionParams(W_R, TWO_PI * 50e3, TWO_PI * 1.9e6, TWO_PI * 65e6)


def field_grid(p, n=61, span=6.0):
    dH = field_linewidth_H(p.gamma, p.g)
    return p.H_res + np.linspace(-span, span, n) * dH


def lorentz(w, c, k, A=1.0):
    return A * k * k / ((w - c) ** 2 + k * k)


def test_params_validation():
    assert P.kappa_c == pytest.approx(P.kappa_r / 2)
    with pytest.raises(DomainError):
        TransmissionParams(W_R, 1.0, 1.0, 0.0)
    with pytest.raises(DomainError):
        TransmissionParams(W_R, 1.0, -1.0, 1.0)
    with pytest.raises(DomainError):
        TransmissionParams(W_R, 1.0, 1.0, 1.0, kappa_c=2.0)


def test_kappa_limits():
    far = P.H_res + 1000 * field_linewidth_H(P.gamma)
    assert kappa_of_field(far, P) == pytest.approx(P.kappa_r, rel=1e-5)
    assert kappa_of_field(P.H_res, P) == pytest.approx(P.kappa_r + P.G_N ** 2 / P.gamma, rel=1e-12)


def test_on_resonance_excess_is_55_5_khz():
    excess = (kappa_of_field(P.H_res, P) - P.kappa_r) / TWO_PI
    assert excess == pytest.approx(1.9e6 ** 2 / 65e6, rel=1e-12)
    assert excess == pytest.approx(55.5e3, abs=50)


@given(st.floats(0.0, 50.0))
def test_kappa_symmetric_about_resonance(k):
    dH = k * field_linewidth_H(P.gamma)
    assert kappa_of_field(P.H_res + dH, P) == pytest.approx(kappa_of_field(P.H_res - dH, P), rel=1e-9)


def test_bare_cavity_trace():
    p = TransmissionParams(W_R, P.kappa_r, 0.0, P.gamma)
    w = W_R + np.linspace(-8, 8, 201) * p.kappa_r
    t = np.abs(s21(w, p.H_res, p)) ** 2
    assert t.max() == pytest.approx(0.25, rel=1e-12)  # (kappa_c / kappa_r)^2
    fit = fit_lorentzian(w, t)
    assert fit.converged
    assert fit.kappa == pytest.approx(p.kappa_r, rel=1e-7)  # offsets ride on a 9 GHz carrier
    assert fit.omega_r == pytest.approx(W_R, rel=1e-14)


def test_lorentzian_noiseless_recovery():
    w = np.linspace(-10, 10, 101)
    fit = fit_lorentzian(w, lorentz(w, 0.7, 1.3, 2.0))
    assert fit.residual < 1e-9
    assert (fit.omega_r, fit.kappa, fit.amplitude) == pytest.approx((0.7, 1.3, 2.0), rel=1e-9)


def test_lorentzian_noise_monte_carlo():
    w = np.linspace(-8, 8, 201)
    errs = []
    for seed in range(100):
        rng = np.random.Generator(np.random.PCG64(seed))
        y = lorentz(w, 0.0, 1.0) * (1 + 0.01 * rng.standard_normal(w.size))
        errs.append(abs(fit_lorentzian(w, y).kappa - 1.0))
    assert max(errs) < 0.03


def test_lorentzian_flat_and_short_traces():
    assert not fit_lorentzian(np.arange(20.0), np.ones(20)).converged
    with pytest.raises(DomainError):
        fit_lorentzian(np.arange(5.0), np.ones(5))


def test_kappa_curve_noiseless_round_trip():
    H = field_grid(P)
    fit = fit_kappa_curve(H, kappa_of_field(H, P))
    assert fit.converged and not fit.warnings
    for name, true in (("kappa_r", P.kappa_r), ("G_N", P.G_N), ("gamma", P.gamma)):
        assert fit.estimates[name] == pytest.approx(true, rel=1e-8)
        assert fit.sigmas[name] > 0
    assert fit.H_res == pytest.approx(P.H_res)


def test_kappa_curve_scale_consistency():
    H = field_grid(P)
    k = synthetic_kappa(H, P, 0.02, 3)
    a = fit_kappa_curve(H, k)
    b = fit_kappa_curve(H, 3.0 * k)
    assert b.estimates["G_N"] ** 2 == pytest.approx(3.0 * a.estimates["G_N"] ** 2, rel=1e-6)
    assert b.estimates["gamma"] == pytest.approx(a.estimates["gamma"], rel=1e-6)
    assert b.H_res == a.H_res


def test_fig5c_like_sweep_recovers_coupling():
    H = field_grid(P, n=41, span=8.0)
    fit = fit_kappa_curve(H, synthetic_kappa(H, P, 0.02, 44))
    assert fit.estimates["G_N"] / TWO_PI == pytest.approx(1.9e6, rel=0.05)


def test_kappa_curve_flags_poor_coverage():
    H = field_grid(P, n=9, span=1.0)
    fit = fit_kappa_curve(H, kappa_of_field(H, P))
    assert any("detuned coverage" in w for w in fit.warnings)
    with pytest.raises(DomainError):
        fit_kappa_curve(H[:4], kappa_of_field(H[:4], P))
    with pytest.raises(DomainError):
        fit_kappa_curve(H, -kappa_of_field(H, P))


def test_fit_result_json(tmp_path):
    H = field_grid(P)
    fit = fit_kappa_curve(H, kappa_of_field(H, P))
    doc = fit.to_json()
    assert doc["estimates"]["G_N_over_2pi_Hz"] == pytest.approx(1.9e6, rel=1e-8)
    fit.write_json(tmp_path / "f.json")
    assert (tmp_path / "f.json").read_text().endswith("}\n")


def test_sqrtN_exact_and_errors():
    N = np.array([1e6, 1e8, 1e10])
    G = 85.0 * np.sqrt(N)
    slope, err = fit_sqrtN(N, G)
    assert slope == pytest.approx(85.0, rel=1e-14)
    assert err < 1e-10
    assert fit_sqrtN([0.0, 4.0], [0.0, 2.0])[0] == pytest.approx(1.0)
    with pytest.raises(DomainError, match="zero"):
        fit_sqrtN([0.0, 0.0], [1.0, 2.0])
    with pytest.raises(DomainError):
        fit_sqrtN([1.0], [1.0])
    with pytest.raises(DomainError):
        fit_sqrtN([-1.0, 1.0], [1.0, 1.0])


@pytest.mark.parametrize("G1", [3.5, 85.0])
def test_sqrtN_noise_monte_carlo(G1):
    N = np.logspace(6, 12, 40)
    for seed in range(100):
        rng = np.random.Generator(np.random.PCG64(seed))
        G = G1 * np.sqrt(N) * (1 + 0.1 * rng.standard_normal(N.size))
        assert fit_sqrtN(N, G)[0] == pytest.approx(G1, rel=0.05)


def test_map_without_coupling_has_flat_ridge():
    p = TransmissionParams(W_R, P.kappa_r, 0.0, P.gamma)
    w = W_R + np.linspace(-5, 5, 101) * p.kappa_r
    m = transmission_map(p, w, field_grid(p, 11))
    assert np.all(m.ridge == m.ridge[0])
    assert np.allclose(m.s21_abs, m.s21_abs[0], rtol=1e-14)


def n_peaks(y):
    return int(np.sum((y[1:-1] > y[:-2]) & (y[1:-1] > y[2:])))


def test_avoided_crossing_only_in_strong_coupling():
    w = W_R + np.linspace(-400e6, 400e6, 4001) * TWO_PI
    strong = TransmissionParams(W_R, P.kappa_r, TWO_PI * 150e6, TWO_PI * 10e6)
    weak = TransmissionParams(W_R, P.kappa_r, TWO_PI * 1.9e6, TWO_PI * 65e6)
    assert strong.strong_coupling() and not weak.strong_coupling()
    ms = transmission_map(strong, w, [strong.H_res])
    assert n_peaks(ms.s21_abs[0]) == 2
    peaks = w[1:-1][(ms.s21_abs[0][1:-1] > ms.s21_abs[0][:-2]) & (ms.s21_abs[0][1:-1] > ms.s21_abs[0][2:])]
    assert np.diff(peaks)[0] / 2 == pytest.approx(strong.G_N, rel=0.02)
    w_weak = W_R + np.linspace(-8, 8, 801) * P.kappa_r
    assert n_peaks(transmission_map(weak, w_weak, [weak.H_res]).s21_abs[0]) == 1


def test_map_round_trip_recovers_parameters():
    H = field_grid(P, n=31, span=6.0)
    w = W_R + np.linspace(-8, 8, 401) * (P.kappa_r + P.G_N ** 2 / P.gamma)
    m = transmission_map(P, w, H)
    Hs, k, ok = kappa_from_map(m)
    assert ok.all()
    assert np.allclose(k, kappa_of_field(Hs, P), rtol=0.02)
    fit = fit_kappa_curve(Hs, k)
    assert fit.estimates["G_N"] == pytest.approx(P.G_N, rel=0.05)
    assert fit.estimates["gamma"] == pytest.approx(P.gamma, rel=0.1)
    assert fit.estimates["kappa_r"] == pytest.approx(P.kappa_r, rel=0.02)


def test_map_csv(tmp_path):
    w = W_R + np.linspace(-3, 3, 7) * P.kappa_r
    m = transmission_map(P, w, field_grid(P, 3))
    m.write_csv(tmp_path / "m.csv")
    m.write_ridge_csv(tmp_path / "r.csv")
    blocks = read_trace_csv(tmp_path / "m.csv")
    assert list(blocks) == [float(h) for h in m.H]
    om, s = blocks[float(m.H[1])]
    assert np.allclose(om, w, rtol=1e-15) and np.array_equal(s, m.s21_abs[1])
    assert len((tmp_path / "r.csv").read_text().splitlines()) == 4


def test_kappa_csv_round_trip(tmp_path):
    H = field_grid(P, 7)
    k = kappa_of_field(H, P)
    write_kappa_csv(tmp_path / "k.csv", H, k)
    H2, k2 = read_kappa_csv(tmp_path / "k.csv")
    assert np.array_equal(H2, H) and np.allclose(k2, k, rtol=1e-15)


@pytest.mark.parametrize("text,match", [
    ("", ":1: empty"),
    ("H,kappa\n1,2\n", ":1: expected header"),
    ("H_T,kappa_over_2pi_Hz\n0.05,1e5\n0.05\n", ":3: expected 2 columns"),
    ("H_T,kappa_over_2pi_Hz\n0.05,1e5\n\n0.06,abc\n", ":4: non-numeric"),
    ("H_T,kappa_over_2pi_Hz\n", "no data rows"),
])
def test_schema_errors_carry_line_numbers(tmp_path, text, match):
    p = tmp_path / "k.csv"
    p.write_text(text)
    with pytest.raises(SchemaError, match=match):
        read_table(p, KAPPA_HEADER)


def test_missing_data_file(tmp_path):
    with pytest.raises(FileNotFoundError, match="absent.csv"):
        read_kappa_csv(tmp_path / "absent.csv")


def test_synthetic_noise_is_seeded():
    H = field_grid(P, 11)
    a = synthetic_kappa(H, P, 0.02, 5)
    assert np.array_equal(a, synthetic_kappa(H, P, 0.02, 5))
    assert not np.array_equal(a, synthetic_kappa(H, P, 0.02, 6))
    assert np.array_equal(synthetic_kappa(H, P, 0.0, 5), kappa_of_field(H, P))


def test_field_linewidth():
    # gamma = 65 MHz at g = 2 is about 2.3 mT
    assert field_linewidth_H(TWO_PI * 65e6) == pytest.approx(2.32e-3, rel=5e-3)
    assert math.isfinite(field_linewidth_H(1.0))

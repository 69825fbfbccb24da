import numpy as np
import pytest

from beccool import (
    FrameRenderer,
    GridSpec,
    ImageGrid,
    OpticsParams,
    PhaseParams,
    add_shot_noise,
    apply_resolution,
    fresnel_image,
    linearized_image,
    make_reference,
    phase_from_spectrum,
    read_ascii_grid,
    tf_phase,
    tf_phase_spectrum,
    write_ascii_grid,
    write_pgm16,
)
from conftest import band_limited_phase


def test_grid_validation():
    with pytest.raises(ValueError):
        GridSpec(nx=100)
    with pytest.raises(ValueError):
        GridSpec(pitch=0.0)
    g = GridSpec(nx=64, nz=32, pitch=4e-6)
    assert g.x[g.nx // 2] == 0.0 and g.z[g.nz // 2] == 0.0


def test_image_grid_validation(grid):
    with pytest.raises(ValueError):
        ImageGrid(grid, np.zeros((3, 3)))
    with pytest.raises(ValueError):
        ImageGrid(grid, np.full((grid.nz, grid.nx), np.nan))


def test_tf_phase_peak_boundary_and_midpoint(grid):
    p = PhaseParams(phi0=-0.08, x0=0.0, z0=0.0)
    phase = tf_phase(p, grid).data
    cz, cx = grid.nz // 2, grid.nx // 2
    assert phase[cz, cx] == pytest.approx(p.phi0)
    # on the ellipse boundary the profile vanishes
    u = (grid.xx / p.r_x) ** 2 + (grid.zz / p.r_z) ** 2
    assert np.all(phase[u > 1.0] == 0.0)
    # value at x0 + r_x/sqrt(2) on axis: phi0 * (1/2)^{3/2}
    x_target = p.r_x / np.sqrt(2)
    p2 = PhaseParams(phi0=-0.08, x0=grid.x[cx + 2] - x_target, z0=0.0)
    phase2 = tf_phase(p2, grid).data
    assert phase2[cz, cx + 2] == pytest.approx(p.phi0 * 0.5**1.5, rel=1e-12)


def test_tf_phase_continuous_at_boundary(grid):
    p = PhaseParams(phi0=-0.5, r_x=40e-6, r_z=30e-6)
    phase = tf_phase(p, grid).data
    u = (grid.xx / p.r_x) ** 2 + (grid.zz / p.r_z) ** 2
    ring = (u > 0.97) & (u <= 1.0)
    assert np.all(np.abs(phase[ring]) < abs(p.phi0) * 0.01)


def test_tf_spectrum_dc_and_shift_theorem(grid):
    p = PhaseParams(phi0=-0.08)
    spec = tf_phase_spectrum(p, grid)
    # DC value is the profile integral: phi0 * (2 pi / 5) r_x r_z
    assert spec[0, 0] == pytest.approx(p.phi0 * 2 * np.pi / 5 * p.r_x * p.r_z, rel=1e-12)
    shifted = tf_phase_spectrum(PhaseParams(phi0=-0.08, x0=7e-6, z0=-3e-6), grid)
    expect = spec * np.exp(-1j * (grid.kx[None, :] * 7e-6 + grid.kz[:, None] * -3e-6))
    np.testing.assert_allclose(shifted, expect, atol=1e-24)


def test_tf_spectrum_matches_pointwise_for_wide_object(grid):
    # wide, well-resolved object: band-limited synthesis agrees with the
    # pointwise profile away from the truncation ripple scale
    p = PhaseParams(phi0=-0.08, r_x=60e-6, r_z=40e-6, x0=13.2e-6, z0=-7.7e-6)
    synth = phase_from_spectrum(tf_phase_spectrum(p, grid), grid).data
    point = tf_phase(p, grid).data
    assert np.max(np.abs(synth - point)) < 0.01 * abs(p.phi0)


def test_fresnel_empty_frame_is_unity(grid, optics):
    img = fresnel_image(tf_phase(PhaseParams(phi0=0.0), grid), optics)
    np.testing.assert_allclose(img.data, 1.0, atol=1e-12)


def test_fresnel_parseval_unitarity(grid):
    # eta = 0: the propagation kernel is a pure phase, total intensity conserved
    opt = OpticsParams(eta=0.0, xi=800e-6)
    phase = tf_phase(PhaseParams(phi0=-0.6), grid)
    before = np.sum(np.abs(np.exp(-1j * phase.data)) ** 2)
    after = np.sum(fresnel_image(phase, opt).data)
    assert abs(after - before) <= 1e-10 * before


def test_fresnel_in_focus_invisible(grid):
    opt = OpticsParams(eta=0.0, xi=0.0)
    img = fresnel_image(tf_phase(PhaseParams(phi0=-0.8), grid), opt)
    np.testing.assert_allclose(img.data, 1.0, atol=1e-12)


def test_fresnel_even_symmetry(grid, optics):
    # centered even phase -> even intensity, exact on the periodic grid
    img = fresnel_image(tf_phase(PhaseParams(phi0=-0.08), grid), optics).data
    mirrored = np.roll(img[::-1, ::-1], (1, 1), axis=(0, 1))
    np.testing.assert_allclose(img, mirrored, atol=1e-13)


def test_linearized_empty_and_mean(grid, optics):
    img = linearized_image(tf_phase(PhaseParams(phi0=0.0), grid), optics)
    np.testing.assert_allclose(img.data, 1.0, atol=0)
    img2 = linearized_image(tf_phase(PhaseParams(phi0=-0.3), grid), optics)
    assert img2.data.mean() == pytest.approx(1.0, abs=1e-14)


def test_linearized_cosine_eigenfunction(grid, optics):
    # a grid-commensurate plane wave is an exact eigenfunction of the
    # spectral Laplacian: I = 1 + (xi/k) q^2 cos(qx)
    q = grid.kx[6]
    phase = ImageGrid(grid, 0.01 * np.cos(q * grid.xx))
    img = linearized_image(phase, optics)
    expect = 1.0 + optics.xi / optics.k * q**2 * 0.01 * np.cos(q * grid.xx)
    np.testing.assert_allclose(img.data, expect, atol=1e-14)


def test_fresnel_vs_linearized_band_limited(grid):
    # small phase, small defocus, band-limited object: the thin-sample
    # linearization tracks the full model to a few percent of the signal
    opt = OpticsParams(eta=0.0, xi=100e-6)
    k_max = np.sqrt(0.1 * 2 * opt.k / opt.xi)
    phase = band_limited_phase(grid, PhaseParams(phi0=0.05), k_max)
    phase = ImageGrid(grid, phase.data * (0.05 / np.abs(phase.data).max()))
    full = fresnel_image(phase, opt).data
    lin = linearized_image(phase, opt).data
    signal = np.abs(lin - 1.0)
    in_object = signal > 0.1 * signal.max()
    dev = np.max(np.abs(full - lin)[in_object]) / signal.max()
    assert dev <= 0.05


def test_shadowgraph_contrast_peaks_at_moderate_defocus(grid):
    # peak-to-trough contrast of the default object versus defocus distance:
    # the optimum sits between 500 um and 1 mm
    phase = tf_phase(PhaseParams(), grid)
    xis = np.linspace(100e-6, 2000e-6, 20)
    contrast = []
    for xi in xis:
        img = fresnel_image(phase, OpticsParams(xi=xi)).data
        contrast.append(img.max() - img.min())
    best = xis[int(np.argmax(contrast))]
    assert 500e-6 <= best <= 1000e-6


def test_apply_resolution_blurs_and_identity(grid, optics):
    phase = tf_phase(PhaseParams(phi0=-0.08), grid)
    blurred = apply_resolution(phase, optics)
    assert np.abs(blurred.data).max() < np.abs(phase.data).max()
    assert blurred.data.sum() == pytest.approx(phase.data.sum(), rel=1e-12)
    ident = apply_resolution(phase, OpticsParams(eta=0.0))
    np.testing.assert_allclose(ident.data, phase.data, atol=1e-15)


def test_frame_renderer_matches_contract_ops_for_wide_object(grid, optics):
    # the fast analytic-spectrum render equals resolution-blur + linearized
    # imaging when aliasing is negligible (wide object)
    p = PhaseParams(phi0=-0.08, r_x=60e-6, r_z=40e-6, x0=4.4e-6, z0=-2.2e-6)
    fast = FrameRenderer(grid, optics).render(p).data
    ref = linearized_image(apply_resolution(tf_phase(p, grid), optics), optics).data
    # residual difference is the aliasing of the pointwise-sampled edge,
    # which the analytic-spectrum path avoids; ~1% of signal here
    assert np.max(np.abs(fast - ref)) < 0.02 * np.max(np.abs(ref - 1.0))


def test_make_reference_defaults_and_flat(grid):
    flat = make_reference(grid, fringes=())
    np.testing.assert_array_equal(flat.data, 1.0)
    ref = make_reference(grid)
    assert ref.data.std() > 0.01  # fringes present


def test_make_reference_single_fringe_span(grid):
    # grid-commensurate fringe reaching cos = +/-1: span is exactly 2a
    q = 2 * np.pi * 8 / (grid.nx * grid.pitch)
    ref = make_reference(grid, fringes=((0.02, (q, 0.0), 0.0),))
    assert ref.data.max() - ref.data.min() == pytest.approx(0.04, rel=1e-9)


def test_shot_noise_determinism_and_scale(grid):
    img = ImageGrid(grid, np.ones((grid.nz, grid.nx)))
    a = add_shot_noise(img, 1e4, np.random.default_rng(7)).data
    b = add_shot_noise(img, 1e4, np.random.default_rng(7)).data
    np.testing.assert_array_equal(a, b)
    # std over pixels ~ 1/sqrt(N) within Monte-Carlo tolerance
    n_pix = grid.nx * grid.nz
    assert a.std() == pytest.approx(1e-2, rel=4 / np.sqrt(n_pix))
    big = add_shot_noise(img, 1e12, np.random.default_rng(3)).data
    assert np.max(np.abs(big - 1.0)) <= 1e-5
    with pytest.raises(ValueError):
        add_shot_noise(img, 0.0, np.random.default_rng(0))


def test_ascii_grid_roundtrip(tmp_path, grid):
    img = tf_phase(PhaseParams(), grid)
    path = tmp_path / "frame.txt"
    write_ascii_grid(img, path)
    with open(path) as f:
        assert f.readline().split()[:2] == ["128", "128"]
    back = read_ascii_grid(path)
    assert back.grid.pitch == pytest.approx(grid.pitch)
    np.testing.assert_allclose(back.data, img.data, atol=1e-13)


def test_pgm16_header_and_size(tmp_path, grid):
    img = tf_phase(PhaseParams(), grid)
    path = tmp_path / "frame.pgm"
    write_pgm16(img, path)
    raw = path.read_bytes()
    assert raw.startswith(b"P5\n128 128\n65535\n")
    header_len = len(b"P5\n128 128\n65535\n")
    assert len(raw) == header_len + 2 * grid.nx * grid.nz

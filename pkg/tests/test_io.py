import numpy as np
import pytest

from bundlechoice.dgp import DgpConfig, simulate_dataset
from bundlechoice.errors import ArtifactIOError, DataError
from bundlechoice.io import read_chain, read_chain_header, read_panel, write_chain, write_panel, write_summary
from bundlechoice.mcmc import McmcSettings, ModelSpec, continue_chain, data_hash, run_chain

from _helpers import random_panel


def test_panel_roundtrip_byte_stable(tmp_path):
    data, _ = simulate_dataset(DgpConfig(N=15, T=3, seed=1))
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    write_panel(data, a)
    back = read_panel(a)
    write_panel(back, b)
    assert a.read_bytes() == b.read_bytes()
    assert data_hash(back) == data_hash(data)
    assert back.price_slot == (0, 0, 0)


def test_panel_roundtrip_unbalanced_exogenous(tmp_path):
    d = random_panel(4, J=2, N=6, T=4, endogenous=False, unbalanced=True)
    write_panel(d, tmp_path / "x.csv")
    back = read_panel(tmp_path / "x.csv")
    assert back.J_p == 0 and back.n_obs == d.n_obs
    np.testing.assert_array_equal(back.y, d.y)
    np.testing.assert_array_equal(back.w[0], d.w[0])


def _write(tmp_path, text):
    p = tmp_path / "bad.csv"
    p.write_text(text)
    return p


@pytest.mark.parametrize("body,line", [
    ("i,t,choice,z_1_1,z_2_1\n1,1,,0.5,1\n1,2,1+3,0.5,1\n", 3),
    ("i,t,choice,z_1_1,z_2_1\n1,1,,0.5,1\n1,2,2,abc,1\n", 3),
    ("i,t,choice,z_1_1,z_2_1\n1,1,,0.5\n", 2),
    ("i,t,choice,z_1_1,z_2_1\nx,1,,0.5,1\n", 2),
    ("i,t,choice,z_1_1,z_2_1\n1,1,,nan,1\n", 2),
])
def test_malformed_rows_report_line(tmp_path, body, line):
    with pytest.raises(DataError, match=f"line {line}"):
        read_panel(_write(tmp_path, body))


def test_malformed_header(tmp_path):
    with pytest.raises(DataError, match="line 1"):
        read_panel(_write(tmp_path, "id,t,choice,z_1_1\n1,1,,0\n"))
    with pytest.raises(DataError, match="line 1"):
        read_panel(_write(tmp_path, "i,t,choice,z_1_1,q_1\n1,1,,0,0\n"))
    with pytest.raises(DataError, match="duplicate"):
        read_panel(_write(tmp_path, "i,t,choice,z_1_1,z_2_1\n1,1,,0,0\n1,1,1,0,0\n"))
    with pytest.raises(ArtifactIOError):
        read_panel(tmp_path / "missing.csv")


def test_chain_roundtrip_and_resume(tmp_path):
    data, truth = simulate_dataset(DgpConfig(N=20, T=3, seed=5))
    spec = ModelSpec(shared=truth.shared, mcmc=McmcSettings(burn_in=3, draws=4, seed=2))
    ch = run_chain(data, spec)
    path = tmp_path / "c.bin"
    write_chain(ch, path)
    back = read_chain(path)
    for name in ("theta", "lam", "f"):
        assert np.array_equal(getattr(ch, name), getattr(back, name))
    assert np.array_equal(ch.mask, back.mask)
    assert back.spec.spec_hash() == ch.spec.spec_hash()
    assert back.metadata == ch.metadata
    hdr = read_chain_header(path)
    assert hdr["metadata"]["seed"] == 2 and hdr["param_names"][0].startswith("z_1_1")
    a = continue_chain(data, ch, 3)
    b = continue_chain(data, back, 3)
    assert np.array_equal(a.theta, b.theta)
    write_chain(back, tmp_path / "d.bin")
    assert path.read_bytes() == (tmp_path / "d.bin").read_bytes()


def test_chain_re_roundtrip(tmp_path):
    data, truth = simulate_dataset(DgpConfig(N=20, T=3, seed=5))
    ch = run_chain(data, ModelSpec(structure="RE", endogenous=False, shared=truth.shared,
                                   mcmc=McmcSettings(burn_in=2, draws=3)))
    write_chain(ch, tmp_path / "re.bin")
    back = read_chain(tmp_path / "re.bin")
    assert np.array_equal(ch.Sigma, back.Sigma) and back.lam is None


def test_not_a_chain(tmp_path):
    p = tmp_path / "x.bin"
    p.write_bytes(b"hello world")
    with pytest.raises(ArtifactIOError):
        read_chain(p)


def test_summary_csv(tmp_path):
    data, truth = simulate_dataset(DgpConfig(N=20, T=3, seed=5))
    ch = run_chain(data, ModelSpec(shared=truth.shared, mcmc=McmcSettings(burn_in=2, draws=4)))
    rows = write_summary(ch, tmp_path / "s.csv")
    lines = (tmp_path / "s.csv").read_text().splitlines()
    assert lines[0] == "parameter,mean,sd,q2.5,q50,q97.5,split_rhat"
    assert len(lines) == len(rows) + 1

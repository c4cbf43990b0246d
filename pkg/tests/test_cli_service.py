import base64
import json
import threading
import urllib.error
import urllib.request

import numpy as np
import pytest

from facediff import cli
from facediff import diffusion as df
from facediff import formats as ff
from facediff import service
from facediff import toygen as tg
from facediff.conditioning import CondConfig
from facediff.denoiser import UNetConfig

MICRO_GEN = tg.ToyGenConfig(k=2, d=4, image_size=16, seed=5)
MICRO_CONFIG = {
    "gen": {"k": 2, "d": 4, "image_size": 16},
    "cond": {"n_attr": 8, "d_cond": 8, "image_size": 16},
    "unet": {"base_channels": 8, "d_cond": 8, "heads": 2, "gn_groups": 2},
    "train": {"steps": 6, "batch": 2, "seed": 1, "log_every": 1},
}


def _trained_ish_model(init_seed=2):
    cfg = df.ModelConfig(
        gen=MICRO_GEN,
        cond=CondConfig(n_attr=8, d_cond=8, image_size=16),
        unet=UNetConfig(k=2, d=4, base_channels=8, d_cond=8, heads=2,
                        gn_groups=2))
    model = df.DiffusionModel(cfg, init_seed=init_seed)
    rng = np.random.default_rng(init_seed + 50)
    for p in model.store:
        if not p.data.any():
            p.data = (rng.standard_normal(p.shape) * 0.05).astype(np.float32)
    model.norm = tg.fit_normalization(
        [rng.standard_normal((2, 4)) for _ in range(16)])
    model.train_steps_done = 6
    return model


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    config = root / "config.json"
    config.write_text(json.dumps(MICRO_CONFIG))
    ckpt = root / "model.ckpt"
    ff.save_checkpoint(ckpt, _trained_ish_model())
    return root


@pytest.fixture(scope="module")
def dataset_file(workdir):
    path = workdir / "data.bin"
    assert cli.main(["gen-dataset", "--out", str(path), "--count", "20",
                     "--seed", "5", "--config",
                     str(workdir / "config.json")]) == 0
    return path


class TestGenDataset:
    def test_identical_flags_byte_identical(self, workdir, dataset_file):
        other = workdir / "data2.bin"
        assert cli.main(["gen-dataset", "--out", str(other), "--count", "20",
                         "--seed", "5", "--config",
                         str(workdir / "config.json")]) == 0
        assert other.read_bytes() == dataset_file.read_bytes()

    def test_header_and_size_arithmetic(self, dataset_file):
        records, cfg = ff.read_dataset(dataset_file)
        assert len(records) == 20
        assert cfg.seed == 5
        assert dataset_file.stat().st_size == ff.dataset_file_size(cfg, 20)

    def test_zero_count_is_usage_error(self, workdir):
        out = workdir / "never.bin"
        with pytest.raises(SystemExit):
            cli.main(["gen-dataset", "--out", str(out), "--count", "0"])
        assert not out.exists()


class TestTrain:
    def _train(self, workdir, dataset_file, out, steps, resume=None,
               capsys=None, ckpt_every=0):
        argv = ["train", "--data", str(dataset_file), "--out", str(out),
                "--config", str(workdir / "config.json"),
                "--steps", str(steps), "--ckpt-every", str(ckpt_every)]
        if resume:
            argv += ["--resume", str(resume)]
        assert cli.main(argv) == 0
        return capsys.readouterr().out.strip().splitlines() if capsys else None

    def test_log_format_and_final_step_count(self, workdir, dataset_file,
                                             capsys):
        out = workdir / "t1.ckpt"
        lines = self._train(workdir, dataset_file, out, 6, capsys=capsys)
        log = [l for l in lines if "," in l]
        assert len(log) == 6
        for i, line in enumerate(log, start=1):
            step, loss, lr = line.split(",")
            assert int(step) == i
            assert np.isfinite(float(loss)) and float(lr) > 0
        model, adam = ff.load_checkpoint(out)
        assert model.train_steps_done == 6
        assert adam is not None and adam.step == 6

    def test_resume_matches_uninterrupted(self, workdir, dataset_file,
                                          capsys):
        full = self._train(workdir, dataset_file, workdir / "f.ckpt", 6,
                           capsys=capsys, ckpt_every=3)
        resumed = self._train(workdir, dataset_file, workdir / "r.ckpt", 6,
                              resume=str(workdir / "f.ckpt.step3"),
                              capsys=capsys)
        full_log = [l for l in full if "," in l]
        resumed_log = [l for l in resumed if "," in l]
        assert len(resumed_log) == 3
        assert resumed_log == full_log[3:]

    def test_mismatched_dataset_rejected(self, workdir, dataset_file, capsys):
        other = workdir / "otherseed.bin"
        cli.main(["gen-dataset", "--out", str(other), "--count", "5",
                  "--seed", "9", "--config", str(workdir / "config.json")])
        code = cli.main(["train", "--data", str(other), "--out",
                         str(workdir / "x.ckpt"), "--resume",
                         str(workdir / "f.ckpt")])
        assert code == 2


class TestSampleEdit:
    def test_unconditional_sampling(self, workdir, capsys):
        out = workdir / "samples"
        assert cli.main(["sample", "--ckpt", str(workdir / "model.ckpt"),
                         "--steps", "4", "--count", "3", "--seed", "11",
                         "--out", str(out)]) == 0
        manifest = json.loads((out / "manifest.json").read_text())
        assert len(manifest["samples"]) == 3
        assert [s["seed"] for s in manifest["samples"]] == [11, 12, 13]
        for s in manifest["samples"]:
            lat = np.load(out / s["latent"])
            assert lat.shape == (2, 4)
            assert (out / s["image"]).exists()
            assert (out / s["seg"]).exists()
            assert set(s["measured_attrs"]) == set(tg.ATTRIBUTE_NAMES)

    def test_manifest_echoes_guidance_weights(self, workdir, capsys):
        out = workdir / "samples_w"
        assert cli.main(["sample", "--ckpt", str(workdir / "model.ckpt"),
                         "--steps", "3", "--omega-v", "2.0", "--omega-a",
                         "3.0", "--out", str(out)]) == 0
        params = json.loads((out / "manifest.json").read_text())["params"]
        assert params["omega_v"] == 2.0 and params["omega_a"] == 3.0

    def test_conditional_flags_accepted(self, workdir, capsys):
        rec = tg.generate_record(0, MICRO_GEN, seed=5)
        ff.write_ppm(workdir / "c.ppm", rec.image)
        ff.write_seg_pgm(workdir / "c_seg.pgm", rec.seg)
        mask = np.zeros(rec.seg.shape, np.uint8)
        mask[:, :8] = 255
        ff.write_pgm(workdir / "c_mask.pgm", mask)
        out = workdir / "samples_c"
        assert cli.main(["sample", "--ckpt", str(workdir / "model.ckpt"),
                         "--steps", "3", "--attr", "glasses=1",
                         "--rgb", str(workdir / "c.ppm"),
                         "--rgb-mask", str(workdir / "c_mask.pgm"),
                         "--seg", str(workdir / "c_seg.pgm"),
                         "--out", str(out)]) == 0
        assert (out / "sample_000.npy").exists()

    def test_edit_runs_and_echoes_t_rec(self, workdir, capsys):
        rec = tg.generate_record(1, MICRO_GEN, seed=5)
        ff.write_ppm(workdir / "e.ppm", rec.image)
        out = workdir / "edited"
        assert cli.main(["edit", "--ckpt", str(workdir / "model.ckpt"),
                         "--steps", "4", "--t-rec", "2",
                         "--rgb", str(workdir / "e.ppm"),
                         "--attr", "hat=1", "--out", str(out)]) == 0
        params = json.loads((out / "manifest.json").read_text())["params"]
        assert params["t_rec"] == 2

    def test_t_rec_beyond_steps_rejected(self, workdir, capsys):
        rec = tg.generate_record(1, MICRO_GEN, seed=5)
        ff.write_ppm(workdir / "e2.ppm", rec.image)
        code = cli.main(["edit", "--ckpt", str(workdir / "model.ckpt"),
                         "--steps", "4", "--t-rec", "9",
                         "--rgb", str(workdir / "e2.ppm"),
                         "--out", str(workdir / "never")])
        assert code == 2

    def test_bad_attr_flag_rejected(self, workdir, capsys):
        code = cli.main(["sample", "--ckpt", str(workdir / "model.ckpt"),
                         "--steps", "2", "--attr", "mustache=1",
                         "--out", str(workdir / "never2")])
        assert code == 2


# --------------------------------------------------------------------------
# HTTP service
# --------------------------------------------------------------------------

@pytest.fixture(scope="module")
def server():
    srv = service.make_server("127.0.0.1", 0, _trained_ish_model(),
                              max_steps=8)
    thread = threading.Thread(target=srv.serve_forever, daemon=True)
    thread.start()
    yield srv
    srv.shutdown()
    srv.server_close()


def _call(srv, method, path, body=None):
    url = f"http://127.0.0.1:{srv.server_address[1]}{path}"
    data = None if body is None else json.dumps(body).encode()
    req = urllib.request.Request(url, data=data, method=method,
                                 headers={"Content-Type": "application/json"})
    try:
        with urllib.request.urlopen(req) as resp:
            return resp.status, json.loads(resp.read())
    except urllib.error.HTTPError as exc:
        return exc.code, json.loads(exc.read())


def _raster(arr, channels):
    u8 = np.ascontiguousarray(arr, np.uint8)
    return {"data": base64.b64encode(u8.tobytes()).decode(),
            "width": u8.shape[-1], "height": u8.shape[-2],
            "channels": channels}


class TestService:
    def test_health(self, server):
        status, body = _call(server, "GET", "/health")
        assert status == 200 and body["status"] == "ok"

    def test_model_info(self, server):
        status, info = _call(server, "GET", "/model/info")
        assert status == 200
        assert len(info["attribute_names"]) == info["n_attr"] == 8
        assert info["latent_shape"] == [2, 4]
        assert info["class_names"] == tg.SEG_CLASS_NAMES
        assert info["max_steps"] == 8

    def test_unconditional_generate(self, server):
        status, body = _call(server, "POST", "/generate",
                             {"count": 2, "steps": 3, "seed": 7})
        assert status == 200
        assert len(body["samples"]) == 2
        s = body["samples"][0]
        assert np.asarray(s["latent"]).shape == (2, 4)
        img = base64.b64decode(s["image"]["data"])
        assert len(img) == 3 * 16 * 16
        assert s["image"]["width"] == s["image"]["height"] == 16
        assert set(s["measured_attrs"]) == set(tg.ATTRIBUTE_NAMES)
        assert body["request"]["seed"] == 7

    def test_generate_is_deterministic_given_seed(self, server):
        req = {"count": 1, "steps": 3, "seed": 21,
               "attrs": {"glasses": 1.0}}
        _, a = _call(server, "POST", "/generate", req)
        _, b = _call(server, "POST", "/generate", req)
        assert a["samples"][0]["latent"] == b["samples"][0]["latent"]

    def test_server_generated_seed_echoed(self, server):
        status, body = _call(server, "POST", "/generate",
                             {"count": 1, "steps": 2})
        assert status == 200
        assert isinstance(body["request"]["seed"], int)

    def test_malformed_json_is_400(self, server):
        url = f"http://127.0.0.1:{server.server_address[1]}/generate"
        req = urllib.request.Request(url, data=b"{nope", method="POST")
        with pytest.raises(urllib.error.HTTPError) as err:
            urllib.request.urlopen(req)
        assert err.value.code == 400

    def test_unknown_attribute_is_422(self, server):
        status, body = _call(server, "POST", "/generate",
                             {"steps": 2, "attrs": {"mustache": 1.0}})
        assert status == 422 and "mustache" in body["error"]

    def test_wrong_raster_size_is_422(self, server):
        status, _ = _call(server, "POST", "/generate",
                          {"steps": 2,
                           "rgb": _raster(np.zeros((3, 8, 8)), 3)})
        assert status == 422

    def test_steps_over_budget_is_422(self, server):
        status, body = _call(server, "POST", "/generate", {"steps": 9})
        assert status == 422 and "budget" in body["error"]

    def test_edit_requires_reference(self, server):
        status, _ = _call(server, "POST", "/edit", {"steps": 3, "t_rec": 1})
        assert status == 400

    def test_edit_t_rec_over_steps_is_422(self, server):
        ref = {"rgb": _raster(np.zeros((3, 16, 16)), 3)}
        status, _ = _call(server, "POST", "/edit",
                          {"steps": 3, "t_rec": 4, "reference": ref})
        assert status == 422

    def test_edit_with_t_rec_equal_steps_matches_reference_regime(self, server):
        # the editing stage is empty, so the result equals sampling with the
        # reference conditions alone
        rec = tg.generate_record(2, MICRO_GEN, seed=5)
        img = np.clip(np.rint(rec.image * 255), 0, 255)
        ref = {"rgb": _raster(img, 3), "attrs": {}}
        status, edited = _call(server, "POST", "/edit",
                               {"steps": 3, "t_rec": 3, "seed": 4,
                                "reference": ref,
                                "attrs": {"hat": 1.0}})
        assert status == 200
        _, plain = _call(server, "POST", "/generate",
                         {"steps": 3, "seed": 4, "rgb": ref["rgb"]})
        assert edited["samples"][0]["latent"] == plain["samples"][0]["latent"]

    def test_render_round_trip(self, server):
        lat = np.random.default_rng(9).standard_normal((2, 4))
        status, body = _call(server, "POST", "/render",
                             {"latent": lat.tolist()})
        assert status == 200
        assert body["seg"]["channels"] == 1
        expected = cli.measured_attributes(lat, MICRO_GEN)
        assert body["measured_attrs"] == expected

    def test_render_bad_shape_is_422(self, server):
        status, _ = _call(server, "POST", "/render",
                          {"latent": [[0.0, 0.0], [0.0, 0.0]]})
        assert status == 422

    def test_unknown_route_is_404(self, server):
        status, _ = _call(server, "GET", "/nope")
        assert status == 404

    def test_loading_state_is_503(self):
        srv = service.make_server("127.0.0.1", 0, None)
        thread = threading.Thread(target=srv.serve_forever, daemon=True)
        thread.start()
        try:
            status, body = _call(srv, "GET", "/health")
            assert status == 503 and body["status"] == "loading"
            status, _ = _call(srv, "POST", "/generate", {"steps": 2})
            assert status == 503
        finally:
            srv.shutdown()
            srv.server_close()

import threading
from fractions import Fraction

import pytest

from hetrt import ProfileDB, ProfileKey, ProfileLoadError
from hetrt.profiles import pow2_bucket


KEY = ProfileKey("k", 1024, "gpu1")


class TestRecording:
    def test_first_fault_free_observation(self):
        db = ProfileDB()
        db.record_outcome(KEY, True, 2_000_000)
        r, v, t = db.lookup(KEY)
        assert (r, v, t) == (2_000_000.0, 1, 1)

    def test_fault_advances_only_t(self):
        db = ProfileDB()
        db.record_outcome(KEY, True, 2_000_000)
        db.record_outcome(KEY, False)
        r, v, t = db.lookup(KEY)
        assert (r, v, t) == (2_000_000.0, 1, 2)
        assert db.record(KEY).fault_probability == Fraction(1, 2)

    def test_mean_of_three_runs(self):
        db = ProfileDB()
        for ms in (1, 2, 3):
            db.record_outcome(KEY, True, ms * 1_000_000)
        assert db.lookup(KEY)[0] == 2_000_000.0

    def test_unseen_key_absent(self):
        assert ProfileDB().lookup(KEY) is None

    def test_all_faulty_key_has_unknown_runtime(self):
        db = ProfileDB()
        for _ in range(3):
            db.record_outcome(KEY, False)
        r, v, t = db.lookup(KEY)
        assert r is None
        assert (v, t) == (0, 3)

    def test_counters_monotonic(self):
        db = ProfileDB()
        last_v = last_t = 0
        import random
        rng = random.Random(4)
        for _ in range(100):
            db.record_outcome(KEY, rng.random() < 0.5, 100)
            rec = db.record(KEY)
            assert rec.v >= last_v and rec.t >= last_t
            assert rec.v <= rec.t
            assert 0 <= (rec.t - rec.v) / rec.t <= 1
            last_v, last_t = rec.v, rec.t

    def test_concurrent_updates_linearize(self):
        db = ProfileDB()

        def hammer():
            for _ in range(1000):
                db.record_outcome(KEY, True, 10)

        threads = [threading.Thread(target=hammer) for _ in range(4)]
        for th in threads:
            th.start()
        for th in threads:
            th.join()
        assert db.lookup(KEY) == (10.0, 4000, 4000)


class TestBucketing:
    def test_exact_is_default(self):
        db = ProfileDB()
        assert db.key_for("k", 1000, "u").size_bucket == 1000

    def test_pow2_mode(self):
        db = ProfileDB(bucketing="pow2")
        assert db.key_for("k", 1000, "u").size_bucket == 1024
        assert pow2_bucket(1) == 1
        assert pow2_bucket(1025) == 2048

    def test_bad_mode_rejected(self):
        with pytest.raises(ValueError):
            ProfileDB(bucketing="fibonacci")


class TestPersistence:
    def test_empty_round_trip(self, tmp_path):
        path = tmp_path / "p.tsv"
        ProfileDB().persist(path)
        db = ProfileDB()
        db.load(path)
        assert len(db) == 0

    def test_round_trip_identity(self, tmp_path):
        path = tmp_path / "p.tsv"
        db = ProfileDB()
        db.record_outcome(KEY, True, 123)
        db.record_outcome(ProfileKey("k2", 64, "cpu0"), False)
        db.persist(path)
        other = ProfileDB()
        other.load(path)
        assert other.items() == db.items()

    def test_merge_on_load_sums_colliding_keys(self, tmp_path):
        path = tmp_path / "p.tsv"
        shared = ProfileDB()
        shared.record_outcome(KEY, True, 100)
        shared.persist(path)
        db = ProfileDB()
        db.record_outcome(KEY, True, 300)
        db.load(path)
        r, v, t = db.lookup(KEY)
        assert (r, v, t) == (200.0, 2, 2)

    def test_cross_instance_visibility(self, tmp_path):
        # a record persisted by one runtime instance is visible after reload
        path = tmp_path / "p.tsv"
        writer = ProfileDB()
        writer.record_outcome(KEY, True, 42)
        writer.persist(path)
        reader = ProfileDB()
        reader.load(path)
        assert reader.lookup(KEY) == (42.0, 1, 1)

    def test_merge_commutativity(self, tmp_path):
        a, b = tmp_path / "a.tsv", tmp_path / "b.tsv"
        da = ProfileDB()
        da.record_outcome(KEY, True, 100)
        da.record_outcome(ProfileKey("x", 1, "u"), False)
        da.persist(a)
        dbb = ProfileDB()
        dbb.record_outcome(KEY, False)
        dbb.record_outcome(ProfileKey("y", 2, "u"), True, 7)
        dbb.persist(b)

        ab = ProfileDB()
        ab.load(a)
        ab.load(b)
        ba = ProfileDB()
        ba.load(b)
        ba.load(a)
        assert ab.items() == ba.items()

    def test_malformed_file_names_line(self, tmp_path):
        path = tmp_path / "bad.tsv"
        path.write_text("hetrt-profile\t1\nk\t10\tu\t1\t1\t1\n")  # 6 fields
        with pytest.raises(ProfileLoadError, match="line 2"):
            ProfileDB().load(path)

    def test_bad_header_rejected(self, tmp_path):
        path = tmp_path / "bad.tsv"
        path.write_text("something-else\t1\n")
        with pytest.raises(ProfileLoadError, match="line 1"):
            ProfileDB().load(path)

    def test_inconsistent_counters_rejected(self, tmp_path):
        path = tmp_path / "bad.tsv"
        path.write_text("hetrt-profile\t1\nk\t10\tu\t100\t1\t5\t3\n")  # v > t
        with pytest.raises(ProfileLoadError, match="line 2"):
            ProfileDB().load(path)

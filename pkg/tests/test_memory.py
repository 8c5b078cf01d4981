import random
import threading

import pytest

from hetrt import (DataLossError, MemoryManager, RegistrationError, UnknownAreaError,
                   UnknownSiblingError, UnknownSpaceError, ValueType, load_fleet)

from conftest import cpu_gpu_gpu_config
from refmodel import DataLoss, RefModel


@pytest.fixture
def mm(basic_fleet):
    return MemoryManager(basic_fleet)


def floats(n, start=0.0):
    import numpy as np
    return np.arange(start, start + n, dtype=np.float32).tobytes()


class TestRegister:
    def test_creates_host_sibling_v0(self, mm):
        aid = mm.register(floats(1000), 1000, ValueType.FLOAT32, "r")
        assert mm.sibling_table() == [(aid, "host", 0, True)]

    def test_two_registrations_are_distinct(self, mm):
        payload = floats(10)
        a = mm.register(payload, 10, ValueType.FLOAT32, "r")
        b = mm.register(payload, 10, ValueType.FLOAT32, "r")
        assert a != b

    def test_zero_size_rejected(self, mm):
        with pytest.raises(RegistrationError):
            mm.register(b"", 0, ValueType.FLOAT32, "r")

    def test_bad_value_type_rejected(self, mm):
        with pytest.raises(RegistrationError):
            mm.register(b"1234", 1, "float999", "r")

    def test_size_mismatch_rejected(self, mm):
        with pytest.raises(RegistrationError):
            mm.register(b"123", 1, ValueType.FLOAT32, "r")

    def test_int_width_derived(self, mm):
        aid = mm.register(bytes(24), 3, ValueType.INT, "rw")
        assert mm.meta(aid).elem_width == 8


class TestRequest:
    def test_read_resident_max_version_is_free(self, mm):
        aid = mm.register(floats(16), 16, ValueType.FLOAT32, "r")
        h = mm.request(aid, "host", "r")
        assert h.base_version == 0
        assert h.transfer_ns == 0
        assert h.source_space is None

    def test_read_copy_charges_transfer(self, mm):
        aid = mm.register(floats(16), 16, ValueType.FLOAT32, "r")
        h = mm.request(aid, "gpu1mem", "r")
        assert h.source_space == "host"
        assert h.transfer_ns == round(64 * 0.01)
        assert (aid, "gpu1mem", 0, True) in mm.sibling_table()

    def test_unknown_area_and_space(self, mm):
        with pytest.raises(UnknownAreaError):
            mm.request("nope", "host", "r")
        aid = mm.register(floats(4), 4, ValueType.FLOAT32, "r")
        with pytest.raises(UnknownSpaceError):
            mm.request(aid, "marsmem", "r")

    def test_write_is_provisional_until_commit(self, mm):
        aid = mm.register(floats(8), 8, ValueType.FLOAT32, "w")
        h = mm.request(aid, "gpu1mem", "w")
        # the write target exists but is not a valid copy yet
        assert (aid, "gpu1mem", 0, False) in mm.sibling_table()
        assert (aid, "host", 0, True) in mm.sibling_table()
        h.payload[:] = floats(8, start=5.0)
        mm.commit_success([h])
        assert (aid, "gpu1mem", 1, True) in mm.sibling_table()
        assert (aid, "host", 0, True) in mm.sibling_table()  # stale but valid

    def test_read_after_remote_write_pulls_highest_version(self, mm):
        # after a committed write in GPU2 memory, a host read transfers from GPU2
        aid = mm.register(floats(8), 8, ValueType.FLOAT32, "w")
        h = mm.request(aid, "gpu2mem", "w")
        h.payload[:] = floats(8, start=1.0)
        mm.commit_success([h])
        r = mm.request(aid, "host", "r")
        assert r.base_version == 1
        assert r.source_space == "gpu2mem"
        assert bytes(r.payload) == floats(8, start=1.0)

    def test_rw_copies_current_content(self, mm):
        aid = mm.register(floats(8, start=3.0), 8, ValueType.FLOAT32, "rw")
        h = mm.request(aid, "gpu1mem", "rw")
        assert bytes(h.payload) == floats(8, start=3.0)

    def test_two_sequential_writes_increment_monotonically(self, mm):
        aid = mm.register(floats(4), 4, ValueType.FLOAT32, "w")
        for expected in (1, 2):
            h = mm.request(aid, "gpu1mem", "w")
            mm.commit_success([h])
            row = [r for r in mm.sibling_table() if r[1] == "gpu1mem"][0]
            assert row[2] == expected

    def test_commit_without_write_handles_changes_nothing(self, mm):
        aid = mm.register(floats(4), 4, ValueType.FLOAT32, "r")
        before = mm.sibling_table()
        h = mm.request(aid, "gpu1mem", "r")
        mm.commit_success([h])
        after_read = mm.sibling_table()
        assert [r for r in after_read if r[1] == "gpu1mem"][0][2] == 0


class TestCheckpointing:
    def test_sole_copy_in_target_space_backed_up_to_host(self, mm):
        # push the max version to gpu1 only, then protect-write there again
        n = 1000
        aid = mm.register(floats(n), n, ValueType.FLOAT32, "w")
        h = mm.request(aid, "gpu1mem", "w")
        h.payload[:] = floats(n, start=9.0)
        mm.commit_success([h])
        # v1 now lives only in gpu1mem: host still has stale v0
        h2 = mm.request(aid, "gpu1mem", "w", protect=True)
        assert h2.checkpoint_ns == round(4 * n * 0.01)
        assert (aid, "host", 1, True) in mm.sibling_table()
        # losing the whole gpu1 space must not lose the data now
        mm.invalidate(aid, "gpu1mem")
        r = mm.request(aid, "host", "r")
        assert r.base_version == 1
        assert bytes(r.payload) == floats(n, start=9.0)

    def test_protected_read_of_sole_device_copy_backed_up(self, mm):
        n = 1000
        aid = mm.register(floats(n), n, ValueType.FLOAT32, "w")
        h = mm.request(aid, "gpu1mem", "w")
        mm.commit_success([h])
        r = mm.request(aid, "gpu1mem", "r", protect=True)
        assert r.checkpoint_ns == round(4 * n * 0.01)
        assert (aid, "host", 1, True) in mm.sibling_table()

    def test_no_backup_when_copy_survives_elsewhere(self, mm):
        aid = mm.register(floats(8), 8, ValueType.FLOAT32, "w")
        h = mm.request(aid, "gpu1mem", "w", protect=True)
        assert h.checkpoint_ns == 0  # host still holds v0

    def test_no_backup_for_host_space_attempts(self, mm):
        aid = mm.register(floats(8), 8, ValueType.FLOAT32, "w")
        h = mm.request(aid, "host", "w", protect=True)
        assert h.checkpoint_ns == 0


class TestInvalidate:
    def test_invalidate_then_read_serves_from_survivor(self, mm):
        aid = mm.register(floats(8), 8, ValueType.FLOAT32, "r")
        mm.request(aid, "gpu1mem", "r")
        mm.invalidate(aid, "gpu1mem")
        r = mm.request(aid, "gpu2mem", "r")
        assert r.base_version == 0
        assert bytes(r.payload) == floats(8)

    def test_invalidating_sole_copy_raises_on_next_request(self, mm):
        aid = mm.register(floats(8), 8, ValueType.FLOAT32, "r")
        mm.invalidate(aid, "host")
        with pytest.raises(DataLossError):
            mm.request(aid, "host", "r")

    def test_unknown_sibling(self, mm):
        aid = mm.register(floats(8), 8, ValueType.FLOAT32, "r")
        with pytest.raises(UnknownSiblingError):
            mm.invalidate(aid, "gpu1mem")


class TestFig1Scenario:
    def test_faulty_gpu1_then_success_on_gpu2(self, mm):
        """Registration, a protected attempt on GPU1 that faults, a retry on
        GPU2 that succeeds, then a host read of the output."""
        inp = mm.register(floats(8), 8, ValueType.FLOAT32, "r")
        out = mm.register(floats(8, start=0.0), 8, ValueType.FLOAT32, "w")
        # attempt on gpu1: siblings materialize there, host copies retained
        h_in = mm.request(inp, "gpu1mem", "r", protect=True)
        h_out = mm.request(out, "gpu1mem", "w", protect=True)
        assert (inp, "gpu1mem", 0, True) in mm.sibling_table()
        assert (out, "gpu1mem", 0, False) in mm.sibling_table()
        # fault: everything the attempt touched on gpu1 becomes invalid
        mm.invalidate(inp, "gpu1mem")
        mm.invalidate(out, "gpu1mem")
        # retry on gpu2 succeeds
        h_in2 = mm.request(inp, "gpu2mem", "r", protect=True)
        h_out2 = mm.request(out, "gpu2mem", "w", protect=True)
        h_out2.payload[:] = floats(8, start=1.0)
        mm.commit_success([h_in2, h_out2])
        # host read pulls v1 from gpu2
        r = mm.request(out, "host", "r")
        assert r.source_space == "gpu2mem"
        assert mm.sibling_table() == [
            (inp, "gpu1mem", 0, False),
            (inp, "gpu2mem", 0, True),
            (inp, "host", 0, True),          # input still version 0
            (out, "gpu1mem", 0, False),
            (out, "gpu2mem", 1, True),
            (out, "host", 1, True),
        ]


class TestProperties:
    def test_max_version_never_decreases(self, mm):
        aid = mm.register(floats(4), 4, ValueType.FLOAT32, "w")
        rng = random.Random(0)
        top = 0
        for _ in range(60):
            space = rng.choice(["host", "gpu1mem", "gpu2mem"])
            if rng.random() < 0.5:
                h = mm.request(aid, space, "w", protect=True)
                if rng.random() < 0.7:
                    mm.commit_success([h])
            else:
                mm.request(aid, space, "r", protect=True)
            new_top = max(v for (_, _, v, valid) in mm.sibling_table() if valid)
            assert new_top >= top
            top = new_top

    def test_read_stability(self, mm):
        aid = mm.register(floats(16), 16, ValueType.FLOAT32, "r")
        a = bytes(mm.request(aid, "gpu1mem", "r").payload)
        b = bytes(mm.request(aid, "gpu1mem", "r").payload)
        assert a == b

    def test_transfer_minimality(self, mm):
        aid = mm.register(floats(16), 16, ValueType.FLOAT32, "r")
        assert mm.request(aid, "gpu1mem", "r").transfer_ns > 0
        assert mm.request(aid, "gpu1mem", "r").transfer_ns == 0

    def test_concurrent_reads_are_safe(self, mm):
        aid = mm.register(floats(64), 64, ValueType.FLOAT32, "r")
        errors = []

        def reader(space):
            try:
                for _ in range(200):
                    h = mm.request(aid, space, "r")
                    assert bytes(h.payload) == floats(64)
            except Exception as exc:  # pragma: no cover
                errors.append(exc)

        threads = [threading.Thread(target=reader, args=(sp,))
                   for sp in ("host", "gpu1mem", "gpu2mem")]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert not errors


def run_random_sequence(seed: int, ops: int = 50):
    """Drive the implementation and the reference model with one random
    op sequence; compare returned values and full tables after every op."""
    fleet = load_fleet(cpu_gpu_gpu_config())
    mm = MemoryManager(fleet)
    ref = RefModel("host")
    rng = random.Random(seed)
    spaces = ["host", "gpu1mem", "gpu2mem"]
    areas: list[tuple[str, str, int]] = []   # (impl id, ref id, size bytes)

    def check_tables():
        impl = {(a, sp): (v, valid) for (a, sp, v, valid) in mm.sibling_table()}
        refd = {key: (e[0], e[1]) for key, e in ref.snapshot().items()}
        mapping = {ia: ra for ia, ra, _ in areas}
        impl_mapped = {(mapping[a], sp): st for (a, sp), st in impl.items()}
        assert impl_mapped == refd

    for _ in range(ops):
        op = rng.choice(["register", "read", "read", "write_commit", "write_commit",
                         "attempt_fault", "invalidate"])
        if op == "register" or not areas:
            if len(areas) < 3:
                size = rng.randint(1, 8)
                payload = bytes(rng.randrange(256) for _ in range(size))
                ia = mm.register(payload, size, ValueType.INT, "rw")
                ra = ref.register(payload)
                areas.append((ia, ra, size))
            check_tables()
            continue
        ia, ra, size = rng.choice(areas)
        space = rng.choice(spaces)
        protect = rng.random() < 0.5
        if op == "read":
            try:
                h = mm.request(ia, space, "r", protect)
                impl_res = (h.base_version, bytes(h.payload))
            except DataLossError:
                impl_res = "data-loss"
            try:
                ref_res = ref.read(ra, space, protect)
            except DataLoss:
                ref_res = "data-loss"
            assert impl_res == ref_res
        elif op == "write_commit":
            access = rng.choice(["w", "rw"])
            newbytes = bytes(rng.randrange(256) for _ in range(rng.randint(0, size)))
            try:
                h = mm.request(ia, space, access, protect)
                h.payload[:len(newbytes)] = newbytes
                mm.commit_success([h])
                impl_res = h.target_version
            except DataLossError:
                impl_res = "data-loss"
            try:
                tok = ref.write(ra, space, access, protect)
                tok[3][:len(newbytes)] = newbytes
                ref.commit(tok)
                ref_res = tok[2]
            except DataLoss:
                ref_res = "data-loss"
            assert impl_res == ref_res
        elif op == "attempt_fault":
            # a faulty protected attempt: read + write, then rollback
            try:
                hr = mm.request(ia, space, "r", True)
                hw = mm.request(ia, space, "w", True)
                if space != "host":
                    mm.invalidate(ia, space)
                impl_res = "ok"
            except DataLossError:
                impl_res = "data-loss"
            try:
                ref.read(ra, space, True)
                ref.write(ra, space, "w", True)
                ref.fault_rollback([ra], space)
                ref_res = "ok"
            except DataLoss:
                ref_res = "data-loss"
            assert impl_res == ref_res
        else:  # invalidate
            if (ia, space) in {(a, sp) for (a, sp, _, _) in mm.sibling_table()
                               for a in [ia]}:
                existing = [(a, sp) for (a, sp, _, _) in mm.sibling_table()]
                if (ia, space) in existing:
                    mm.invalidate(ia, space)
                    ref.invalidate(ra, space)
        check_tables()
        # payload agreement for all valid siblings
        impl_payloads = mm.payload_snapshot()
        mapping = {a: r for a, r, _ in areas}
        for (a, sp), (ver, valid, data) in impl_payloads.items():
            rkey = (mapping[a], sp)
            rv, rvalid, rdata = ref.snapshot()[rkey]
            if valid:
                assert data == rdata, f"payload mismatch at {rkey}"


class TestOracleEquivalence:
    def test_random_sequences_match_reference(self):
        for seed in range(500):
            run_random_sequence(seed)


class TestDump:
    def test_dump_table_format(self, mm):
        aid = mm.register(floats(4), 4, ValueType.FLOAT32, "r")
        text = mm.dump_table()
        assert text.splitlines()[0] == "area\tspace\tversion\tvalid"
        assert f"{aid}\thost\t0\t1" in text

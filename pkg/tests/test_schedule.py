import pytest

from cpheno.errors import ParameterError
from cpheno.trainers import LossHistory, effective_warmup, lr_schedule
from cpheno.trainers.prefetch import prefetch


class TestLRSchedule:
    def test_endpoints(self):
        assert lr_schedule(0, 10, 100, 1e-3) == 0.0
        assert lr_schedule(10, 10, 100, 1e-3) == pytest.approx(1e-3)
        assert lr_schedule(100, 10, 100, 1e-3) == pytest.approx(0.0, abs=1e-15)

    def test_linear_warmup(self):
        assert lr_schedule(5, 10, 100, 1.0) == pytest.approx(0.5)

    def test_cosine_midpoint(self):
        assert lr_schedule(55, 10, 100, 1.0) == pytest.approx(0.5)

    def test_continuous_at_warmup_boundary(self):
        before = lr_schedule(999, 1000, 5000, 1.0)
        at = lr_schedule(1000, 1000, 5000, 1.0)
        after = lr_schedule(1001, 1000, 5000, 1.0)
        assert abs(at - before) < 2e-3
        assert abs(at - after) < 2e-3

    def test_monotone_phases(self):
        values = [lr_schedule(s, 20, 200, 1.0) for s in range(201)]
        assert values[:21] == sorted(values[:21])
        assert values[20:] == sorted(values[20:], reverse=True)
        assert max(values) == pytest.approx(1.0)

    def test_no_warmup(self):
        assert lr_schedule(0, 0, 10, 0.1) == pytest.approx(0.1)

    @pytest.mark.parametrize("step, warmup, total", [(-1, 0, 10), (11, 0, 10), (0, 10, 10), (0, 12, 10)])
    def test_invalid(self, step, warmup, total):
        with pytest.raises(ParameterError):
            lr_schedule(step, warmup, total, 1.0)

    @pytest.mark.parametrize("warmup, total, expected", [(500, 100, 99), (5, 100, 5), (10, 1, 0), (10, 0, 0)])
    def test_effective_warmup(self, warmup, total, expected):
        assert effective_warmup(warmup, total) == expected


class TestPrefetch:
    @pytest.mark.parametrize("depth", [0, 1, 4])
    def test_order(self, depth):
        assert list(prefetch(iter(range(50)), depth)) == list(range(50))

    def test_producer_error_reaches_consumer(self):
        def produce():
            yield 1
            yield 2
            raise RuntimeError("bad batch")

        seen = []
        with pytest.raises(RuntimeError, match="bad batch"):
            for item in prefetch(produce(), 2):
                seen.append(item)
        assert seen == [1, 2]

    def test_early_stop(self):
        stream = prefetch(iter(range(1000)), 1)
        assert next(stream) == 0
        stream.close()


class TestLossHistory:
    def test_record_and_analysis(self):
        history = LossHistory()
        history.record(1, 0, 1e-4, loss=2.0, loss_m=1.5, loss_kd=None)
        history.record(2, 0, 2e-4, loss=1.0, loss_m=0.8)
        frame = history.get_analysis()
        assert list(frame.columns) == ["step", "epoch", "lr", "loss", "loss_m"]
        assert history.losses == [2.0, 1.0]
        assert history.final_loss == 1.0
        assert len(history) == 2

    def test_empty(self):
        history = LossHistory()
        assert history.final_loss is None
        history.plot("unused.png")

    def test_csv_round_trip_and_plot(self, tmp_path):
        history = LossHistory()
        for step in range(1, 6):
            history.record(step, 0, 0.1, loss=1.0 / step)
        history.save_csv(str(tmp_path / "h" / "loss.csv"))
        loaded = LossHistory.load_csv(str(tmp_path / "h" / "loss.csv"))
        assert loaded.losses == pytest.approx(history.losses)
        history.plot(str(tmp_path / "h" / "loss.png"))
        assert (tmp_path / "h" / "loss.png").exists()

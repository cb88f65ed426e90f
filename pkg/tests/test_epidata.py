from __future__ import annotations

import pytest
import requests

from reportdelay.epidata import (EpidataClient, FetchError, FetchSpec, epiweek_range, epiweek_to_season_week,
                                 fetch_epidata)


class FakeResponse:
    def __init__(self, payload, status=200):
        self.payload, self.status = payload, status

    def raise_for_status(self):
        if self.status >= 400:
            raise requests.HTTPError(f"status {self.status}")

    def json(self):
        return self.payload


class FakeApi:
    """Serves fluview-shaped rows where ``num_ili = 100 * (1 - 0.5 ** (lag + 1))``."""

    def __init__(self, fail_first=0):
        self.calls = []
        self.fail_first = fail_first

    def __call__(self, url, params):
        self.calls.append(dict(params))
        if len(self.calls) <= self.fail_first:
            return FakeResponse({}, status=503)
        ew = int(params["epiweeks"])
        if "lag" in params:
            lag = int(params["lag"])
            rows = [{"epiweek": ew, "lag": lag, "num_ili": 100 * (1 - 0.5 ** (lag + 1))}]
        else:
            rows = [{"epiweek": ew, "lag": 30, "num_ili": 100.0}]
        return FakeResponse({"result": 1, "epidata": rows, "message": "success"})


def client(tmp_path, api, **kw):
    return EpidataClient(get=api, cache=tmp_path / "cache", sleep=lambda s: None, **kw)


class TestEpiweeks:
    def test_range_crosses_year_with_week_53(self):
        assert epiweek_range(201551, 201602) == [201551, 201552, 201553, 201601, 201602]
        assert epiweek_range(201751, 201802) == [201751, 201752, 201801, 201802]

    def test_season_mapping(self):
        assert epiweek_to_season_week(201540) == (2015, 1)
        assert epiweek_to_season_week(201601) == (2015, 14)
        assert epiweek_to_season_week(201553) is None


class TestFetch:
    def test_lag_fan_out(self, tmp_path):
        api = FakeApi()
        res = fetch_epidata(FetchSpec(epiweeks=[201545], lags=range(7)), client(tmp_path, api))
        assert len(res.counts) == 7
        assert list(res.counts.columns) == ["season", "week", "lag", "count"]
        assert res.counts["count"].is_monotonic_increasing
        assert len(res.validation) == 1 and not res.partial
        assert res.network_calls == 8

    def test_cached_rerun_makes_no_calls(self, tmp_path):
        spec = FetchSpec(epiweeks=[201545, 201546], lags=range(3))
        first = fetch_epidata(spec, client(tmp_path, FakeApi()))
        api = FakeApi()
        second = fetch_epidata(spec, client(tmp_path, api))
        assert second.network_calls == 0 and api.calls == []
        assert second.counts.equals(first.counts)

    def test_retries_then_succeeds(self, tmp_path):
        api = FakeApi(fail_first=2)
        sleeps = []
        c = EpidataClient(get=api, cache=tmp_path / "c", sleep=sleeps.append, retries=3, backoff=1.0,
                          min_interval=0.0)
        payload = c.fetch({"regions": "nat", "epiweeks": "201545", "lag": "0"})
        assert payload["result"] == 1 and c.network_calls == 3
        assert sleeps == [1.0, 2.0]

    def test_exhausted_retries_are_reported(self, tmp_path):
        api = FakeApi(fail_first=100)
        c = client(tmp_path, api, retries=2, min_interval=0.0)
        with pytest.raises(FetchError) as info:
            c.fetch({"regions": "nat", "epiweeks": "201545"})
        assert info.value.attempts == 2
        res = fetch_epidata(FetchSpec(epiweeks=[201545], lags=[0]), c)
        assert res.partial and len(res.errors) == 2

    def test_week_53_flagged(self, tmp_path):
        res = fetch_epidata(FetchSpec(epiweeks=[201553], lags=[0]), client(tmp_path, FakeApi()))
        assert res.partial and "week 53" in res.errors[0]

    def test_api_error_result(self, tmp_path):
        bad = lambda url, params: FakeResponse({"result": -1, "message": "bad request"})
        c = EpidataClient(get=bad, cache=tmp_path / "c", sleep=lambda s: None, retries=1)
        with pytest.raises(FetchError, match="bad request"):
            c.fetch({"regions": "nat"})

    def test_bad_mode(self):
        with pytest.raises(ValueError):
            FetchSpec(mode="latest")

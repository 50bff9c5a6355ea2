import json

import pytest

from coexist.scenario import paper_scale_config, parse_config


@pytest.fixture(scope="session")
def paper_config():
    return parse_config(paper_scale_config())


@pytest.fixture()
def paper_config_dict():
    return paper_scale_config()


@pytest.fixture()
def config_file(tmp_path):
    def write(data, name="config.json"):
        path = tmp_path / name
        path.write_text(json.dumps(data))
        return path
    return write

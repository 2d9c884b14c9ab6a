import pytest

from exacb.store import FilesystemStore, GitBranchStore

from factories import init_repo


@pytest.fixture
def fs_store(tmp_path):
    root = tmp_path / "store"
    root.mkdir()
    return FilesystemStore(root)


@pytest.fixture
def repo(tmp_path):
    return init_repo(tmp_path / "repo")


@pytest.fixture
def git_store(repo):
    return GitBranchStore(repo)


@pytest.fixture(params=["filesystem", "git"])
def any_store(request, tmp_path):
    if request.param == "filesystem":
        root = tmp_path / "fs"
        root.mkdir()
        return FilesystemStore(root)
    return GitBranchStore(init_repo(tmp_path / "gitrepo"))

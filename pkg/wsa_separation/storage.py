"""Local storage of artifacts: checkpoints, separated audio, CSV reports."""
import os
import contextlib
import hashlib
import logging
import platform
import shutil
import tempfile

if platform.system() != 'Windows':
    import fcntl

LOGGER = logging.getLogger(__name__)


def lock_dir():
    return os.getenv('WSA_LOCK_DIR') or os.path.join(tempfile.gettempdir(), 'wsa-locks')


@contextlib.contextmanager
def lock(fname):
    if int(os.getenv('WSA_LOCK_FREE', '0')) == 1:
        yield
        return
    dname = lock_dir()
    try:
        os.makedirs(dname)
    except OSError:
        pass

    # fcntl module doesn't support on window os
    if platform.system() != 'Windows':
        key = hashlib.sha1(os.path.abspath(fname).encode('utf-8')).hexdigest()
        lock_file = os.path.join(dname, '%s.lock' % key)
        with open(lock_file, 'w') as f:
            fcntl.lockf(f, fcntl.LOCK_EX)
            try:
                yield
            finally:
                fcntl.lockf(f, fcntl.LOCK_UN)
    else:
        yield


class LocalStorage:
    """Storage of artifacts on the local filesystem."""

    def __init__(self, basedir=None):
        self._basedir = basedir

    def _internal_path(self, path):
        if self._basedir and not os.path.isabs(path):
            path = os.path.join(self._basedir, path)
        return path

    def write(self, path, write_fn, suffix=''):
        """Writes an artifact atomically.

        Args:
          path: destination path.
          write_fn: callable receiving a temporary file name to fill.
          suffix: suffix of the temporary file (some writers infer formats from it).
        """
        path = self._internal_path(path)
        dirname = os.path.dirname(os.path.abspath(path))
        self.mkdir(dirname)
        with lock(path):
            with tempfile.NamedTemporaryFile(delete=False, dir=dirname, suffix=suffix) as tmpfile:
                tmpfile.close()
                LOGGER.debug('Writing %s via %s', path, tmpfile.name)
                try:
                    write_fn(tmpfile.name)
                    shutil.move(tmpfile.name, path)
                except BaseException:
                    if os.path.exists(tmpfile.name):
                        os.remove(tmpfile.name)
                    raise
        return path

    def write_bytes(self, path, data):
        def _write(tmpname):
            with open(tmpname, 'wb') as f:
                f.write(data)

        return self.write(path, _write)

    def read_bytes(self, path):
        with open(self._internal_path(path), 'rb') as f:
            return f.read()

    def mkdir(self, path):
        path = self._internal_path(path)
        if not os.path.exists(path):
            os.makedirs(path)

    def listdir(self, path, suffix=None):
        """Returns the files of a directory with their stat, optionally filtered by suffix."""
        path = self._internal_path(path)
        if not os.path.isdir(path):
            raise ValueError("%s is not a directory" % path)
        listfile = {}
        for f in sorted(os.listdir(path)):
            fullpath = os.path.join(path, f)
            if not os.path.isfile(fullpath) or f.startswith('.'):
                continue
            if suffix is not None and not f.endswith(suffix):
                continue
            stat = os.stat(fullpath)
            listfile[fullpath] = {'size': stat.st_size, 'last_modified': stat.st_mtime}
        return listfile

    def exists(self, path):
        return os.path.exists(self._internal_path(path))

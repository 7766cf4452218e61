from editables.redirector import RedirectingFinder as F
F.install()
F.map_module('recallgym', '/root/pkg/src/recallgym/__init__.py')
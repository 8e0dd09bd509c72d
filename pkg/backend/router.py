from ninja import NinjaAPI
from separation.api import router as separation_router

# Create your router's here.

api = NinjaAPI(title="Coset Newton ICA")

api.add_router("/separation/", separation_router)

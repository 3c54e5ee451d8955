from .database import Base, engine, get_db
from .run import ScenarioRun

# Create all tables
def create_tables():
    Base.metadata.create_all(bind=engine)
